import { afterEach, describe, expect, it, vi } from "vitest";

import { boot, tokenFromFragment } from "../src/index.js";
import { FakeGateway } from "./fake_gateway.js";

afterEach(() => {
  vi.unstubAllGlobals();
  document.body.innerHTML = "";
});

describe("tokenFromFragment", () => {
  it("extracts the token from the launch fragment", () => {
    expect(tokenFromFragment("#token=abc123")).toBe("abc123");
    expect(tokenFromFragment("#from=lms&token=x%20y")).toBe("x y");
  });

  it("returns null when no token is present", () => {
    expect(tokenFromFragment("")).toBeNull();
    expect(tokenFromFragment("#other=1")).toBeNull();
  });
});

describe("boot", () => {
  it("shows the re-launch panel when the token is missing, without any request", async () => {
    const fetchSpy = vi.fn();
    vi.stubGlobal("fetch", fetchSpy);
    const root = document.createElement("div");
    document.body.append(root);
    window.location.hash = "";

    await boot(root);
    expect(fetchSpy).not.toHaveBeenCalled();
    expect(root.querySelector(".cg-error-panel")?.textContent).toMatch(/No session token/);
    expect(root.querySelector(".cg-hint")?.textContent).toMatch(/course page/);
  });

  it("mounts the widget and strips the token from the address bar", async () => {
    const gateway = new FakeGateway();
    vi.stubGlobal("fetch", gateway.fetch);
    const root = document.createElement("div");
    document.body.append(root);
    window.location.hash = `#token=${gateway.token}`;

    await boot(root);
    expect(root.querySelector(".cg-greeting")?.textContent).toBe("Hi Alice!");
    expect(window.location.hash).toBe("");
  });

  it("shows the session-ended panel when the token is stale", async () => {
    const gateway = new FakeGateway();
    vi.stubGlobal("fetch", gateway.fetch);
    const root = document.createElement("div");
    document.body.append(root);
    window.location.hash = "#token=expired-token";

    await boot(root);
    expect(root.querySelector(".cg-error-panel")?.textContent).toMatch(/session has ended/);
  });

  it("renders the existing transcript after boot", async () => {
    const gateway = new FakeGateway();
    gateway.serverTurns = [
      {
        turn_id: "t1",
        kb_id: "general-info",
        query: "old question",
        response_text: "old answer",
        rating: 5,
        fallback_used: false,
        created_at: 1,
      },
    ];
    vi.stubGlobal("fetch", gateway.fetch);
    const root = document.createElement("div");
    document.body.append(root);
    window.location.hash = `#token=${gateway.token}`;

    await boot(root);
    expect(root.querySelector(".cg-query")?.textContent).toBe("old question");
    expect(root.querySelectorAll(".cg-star.filled")).toHaveLength(5);
  });
});
