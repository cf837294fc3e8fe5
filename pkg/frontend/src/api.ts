/** Typed client for the query service HTTP API. */

export interface CallRecord {
  call: string;
  result: Record<string, number | string> | null;
  error: string | null;
}

export interface GuardrailInfo {
  verdict: string;
  reason: string;
  sanitized: boolean;
}

export interface QueryTrace {
  inference_ms: number;
  data_lookup_ms: number;
  backend_logic_ms: number;
  cache_hit: boolean;
  calls: CallRecord[];
  guardrail: GuardrailInfo | null;
}

export interface QueryResponse {
  answer: string;
  trace: QueryTrace;
}

export interface TemplateInfo {
  id: string;
  text: string;
  language: string;
  slots: string[];
}

export interface GeocodeResult {
  name: string;
  lat: number;
  lon: number;
}

export interface HealthInfo {
  status: string;
  records: number;
  places: number;
}

/** Raised for transport failures and 5xx answers; callers may retry. */
export class ServiceUnavailable extends Error {}

/** Raised when a location cannot be resolved (geocode 404). */
export class LocationNotFound extends Error {}

type FetchLike = typeof fetch;

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = globalThis.fetch.bind(globalThis),
  ) {}

  private async request(path: string, init?: RequestInit): Promise<Response> {
    let response: Response;
    try {
      response = await this.fetchFn(this.baseUrl + path, init);
    } catch (err) {
      throw new ServiceUnavailable(`cannot reach the service: ${String(err)}`);
    }
    if (response.status >= 500) {
      throw new ServiceUnavailable(`service error ${response.status}`);
    }
    return response;
  }

  async query(
    question: string,
    point?: { lat: number; lon: number },
    lang?: string,
  ): Promise<QueryResponse> {
    const body: Record<string, unknown> = { question };
    if (point) {
      body.lat = point.lat;
      body.lon = point.lon;
    }
    if (lang) {
      body.lang = lang;
    }
    const response = await this.request("/query", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!response.ok) {
      throw new ServiceUnavailable(`unexpected status ${response.status}`);
    }
    return (await response.json()) as QueryResponse;
  }

  async templates(): Promise<TemplateInfo[]> {
    const response = await this.request("/templates");
    const payload = (await response.json()) as { templates: TemplateInfo[] };
    return payload.templates;
  }

  async geocode(lat: number, lon: number): Promise<GeocodeResult> {
    const response = await this.request(
      `/geocode?lat=${encodeURIComponent(lat)}&lon=${encodeURIComponent(lon)}`,
    );
    if (response.status === 404) {
      throw new LocationNotFound(`nothing known near ${lat}, ${lon}`);
    }
    return (await response.json()) as GeocodeResult;
  }

  async health(): Promise<HealthInfo> {
    const response = await this.request("/health");
    return (await response.json()) as HealthInfo;
  }

  async stats(): Promise<Record<string, unknown>> {
    const response = await this.request("/stats");
    return (await response.json()) as Record<string, unknown>;
  }
}
