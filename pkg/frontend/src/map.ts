/** Clickable region map rendered as a plain SVG pane.
 *
 * No tile fetching: the demo runs fully offline, so the pane draws the
 * region extent with a grid and converts clicks to WGS-84 coordinates.
 * Place names always come from the service geocode endpoint.
 */

export interface Bounds {
  latMin: number;
  latMax: number;
  lonMin: number;
  lonMax: number;
}

/** Demo-region extent; matches the shipped gazetteer. */
export const DEFAULT_BOUNDS: Bounds = {
  latMin: 43.03,
  latMax: 43.24,
  lonMin: -2.76,
  lonMax: -2.45,
};

export interface MapSelection {
  point: { lat: number; lon: number };
  name: string; // resolved by the service, never computed client-side
}

/** Convert a click position inside `rect` to geographic coordinates. */
export function pixelToPoint(
  x: number,
  y: number,
  rect: { width: number; height: number },
  bounds: Bounds = DEFAULT_BOUNDS,
): { lat: number; lon: number } {
  const fx = Math.min(1, Math.max(0, x / rect.width));
  const fy = Math.min(1, Math.max(0, y / rect.height));
  return {
    lat: bounds.latMax - fy * (bounds.latMax - bounds.latMin),
    lon: bounds.lonMin + fx * (bounds.lonMax - bounds.lonMin),
  };
}

export function pointToPixel(
  point: { lat: number; lon: number },
  rect: { width: number; height: number },
  bounds: Bounds = DEFAULT_BOUNDS,
): { x: number; y: number } {
  return {
    x:
      ((point.lon - bounds.lonMin) / (bounds.lonMax - bounds.lonMin)) *
      rect.width,
    y:
      ((bounds.latMax - point.lat) / (bounds.latMax - bounds.latMin)) *
      rect.height,
  };
}

const SVG_NS = "http://www.w3.org/2000/svg";
const VIEW = { width: 300, height: 220 };

/** Draw the pane into `svg` and report clicks as geographic points. */
export function mountMap(
  svg: SVGSVGElement,
  onClick: (point: { lat: number; lon: number }) => void,
  bounds: Bounds = DEFAULT_BOUNDS,
): void {
  svg.setAttribute("viewBox", `0 0 ${VIEW.width} ${VIEW.height}`);
  const doc = svg.ownerDocument;
  const background = doc.createElementNS(SVG_NS, "rect");
  background.setAttribute("width", String(VIEW.width));
  background.setAttribute("height", String(VIEW.height));
  background.setAttribute("class", "map-background");
  svg.appendChild(background);
  for (let i = 1; i < 6; i++) {
    const vertical = doc.createElementNS(SVG_NS, "line");
    vertical.setAttribute("x1", String((VIEW.width / 6) * i));
    vertical.setAttribute("x2", String((VIEW.width / 6) * i));
    vertical.setAttribute("y1", "0");
    vertical.setAttribute("y2", String(VIEW.height));
    vertical.setAttribute("class", "map-grid");
    svg.appendChild(vertical);
    const horizontal = doc.createElementNS(SVG_NS, "line");
    horizontal.setAttribute("y1", String((VIEW.height / 6) * i));
    horizontal.setAttribute("y2", String((VIEW.height / 6) * i));
    horizontal.setAttribute("x1", "0");
    horizontal.setAttribute("x2", String(VIEW.width));
    horizontal.setAttribute("class", "map-grid");
    svg.appendChild(horizontal);
  }
  const marker = doc.createElementNS(SVG_NS, "circle");
  marker.setAttribute("r", "4");
  marker.setAttribute("class", "map-marker");
  marker.setAttribute("visibility", "hidden");
  svg.appendChild(marker);

  svg.addEventListener("click", (event: MouseEvent) => {
    const rect = svg.getBoundingClientRect();
    if (rect.width === 0 || rect.height === 0) {
      return;
    }
    const x = event.clientX - rect.left;
    const y = event.clientY - rect.top;
    const scaled = pixelToPoint(x, y, rect, bounds);
    const pixel = pointToPixel(scaled, VIEW, bounds);
    marker.setAttribute("cx", String(pixel.x));
    marker.setAttribute("cy", String(pixel.y));
    marker.setAttribute("visibility", "visible");
    onClick(scaled);
  });
}
