/** Browser entry point: boot the app against the service that serves us. */

import { ApiClient } from "./api.js";
import { initApp } from "./app.js";

const root = document.getElementById("app");
if (root) {
  initApp(root, new ApiClient(""));
}
