import { ApiClient } from "./api.js";
import { AnnotationApp } from "./app.js";

const root = document.getElementById("app");
if (!root) throw new Error("missing #app container");

const app = new AnnotationApp({
  root,
  api: new ApiClient(""),
  storage: window.localStorage,
});

document.addEventListener("keydown", (ev) => app.handleKey(ev));
app.start();
