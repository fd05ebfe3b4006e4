import { AnalystApp } from "./app";

const root = document.getElementById("app");
if (root) {
  // Served by the API itself (same origin) unless overridden, e.g.
  // <body data-api-base="http://127.0.0.1:8797">.
  const base = document.body.dataset.apiBase ?? "";
  void new AnalystApp(root, base).init();
}
