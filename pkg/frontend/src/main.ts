import { StudioUi } from "./ui.js";
import { UiSession } from "./session.js";

const params = new URLSearchParams(window.location.search);
const baseUrl =
  params.get("server") ?? `${window.location.protocol}//${window.location.host}`;

const root = document.getElementById("app")!;
const session = new UiSession(baseUrl);
new StudioUi(session, root);
session.load().catch(() => {
  root.insertAdjacentHTML(
    "beforeend",
    `<p class="error">Could not reach the palette service at ${baseUrl}.
     Pass ?server=http://host:port to point the studio at it.</p>`,
  );
});
