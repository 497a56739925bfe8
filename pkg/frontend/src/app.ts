/**
 * DOM wiring: event log in, rendered state out.
 *
 * Every user action and server response becomes an Event fed through the
 * reducer; the view is re-rendered from the resulting state alone.
 */

import * as THREE from "three";
import { ApiError, Client } from "./api.js";
import type { EditBody, EditCondition, MeshPayload } from "./api.js";
import {
  canSubmit,
  displayedMesh,
  initialState,
  reduce,
  swapCandidates,
  type Event,
  type SceneState,
} from "./state.js";
import { createViewer } from "./viewer.js";

const SWAP_K = 5;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

export function startApp(): void {
  const client = new Client("");
  let state: SceneState = initialState();
  const events: Event[] = [];

  const canvas = el<HTMLCanvasElement>("viewport");
  const renderer = new THREE.WebGLRenderer({ canvas, antialias: true });
  const viewer = createViewer(canvas.clientWidth / Math.max(1, canvas.clientHeight));
  let shownMesh: MeshPayload | null = null;

  function dispatch(ev: Event): void {
    events.push(ev);
    state = reduce(state, ev);
    render();
  }

  function render(): void {
    const mesh = displayedMesh(state);
    if (mesh !== shownMesh) {
      if (mesh) viewer.setPayload(mesh);
      shownMesh = mesh;
    }
    viewer.setExploded(state.exploded);
    viewer.setSelected(state.selected);
    renderer.setSize(canvas.clientWidth, canvas.clientHeight, false);
    viewer.render(renderer);

    el("selection").textContent = state.selected.length
      ? `selected parts: ${state.selected.join(", ")}`
      : "no parts selected (click parts in the viewport)";
    el("groups").textContent = state.composeGroups.length
      ? state.composeGroups.map((g) => `[${g.join(",")}]`).join("  ")
      : "no compose groups";
    el<HTMLButtonElement>("submit-edit").disabled = !canSubmit(state);
    el<HTMLButtonElement>("undo").disabled = state.busy || state.history.length === 0;
    el<HTMLButtonElement>("before-after").disabled = !state.previousMesh;
    el("before-after").textContent = state.showBefore ? "show after" : "show before";

    const banner = el("banner");
    banner.textContent = state.banner ?? "";
    banner.style.display = state.banner ? "block" : "none";

    el("badges").textContent = state.metrics
      ? Object.entries(state.metrics)
          .map(([k, v]) => `${k}: ${typeof v === "number" ? v.toFixed(4) : v}`)
          .join("   ")
      : "";

    const hist = el("history");
    hist.innerHTML = "";
    state.history.forEach((entry, i) => {
      const li = document.createElement("li");
      li.textContent = `#${i + 1} ${JSON.stringify(entry)}`;
      hist.appendChild(li);
    });

    const legend = el("legend");
    legend.innerHTML = "";
    for (const part of mesh?.parts ?? []) {
      const li = document.createElement("li");
      const swatch = document.createElement("span");
      swatch.style.cssText = `display:inline-block;width:10px;height:10px;margin-right:6px;background:${part.color}`;
      li.appendChild(swatch);
      li.appendChild(document.createTextNode(`part ${part.part_id}${part.label ? ` — ${part.label}` : ""}`));
      li.onclick = () => dispatch({ kind: "toggle-select", partId: part.part_id });
      if (state.selected.includes(part.part_id)) li.classList.add("picked");
      legend.appendChild(li);
    }

    const cands = el("candidates");
    cands.innerHTML = "";
    swapCandidates(state.retrievals, SWAP_K).forEach((r, i) => {
      const li = document.createElement("li");
      li.textContent = `${r.asset_id} (sim ${r.similarity.toFixed(3)})`;
      if (state.pending.candidate === i) li.classList.add("picked");
      li.onclick = () => dispatch({ kind: "pick-candidate", index: i });
      cands.appendChild(li);
    });

    el("alpha-value").textContent = state.pending.alpha.toFixed(2);
  }

  async function loadAsset(id: string): Promise<void> {
    const [detail, mesh, retrievals] = await Promise.all([
      client.asset(id),
      client.mesh(id),
      client.retrievals(id).catch(() => []),
    ]);
    dispatch({ kind: "asset-loaded", assetId: id, mesh, history: detail.history, retrievals });
  }

  async function refreshAssets(): Promise<void> {
    const assets = await client.listAssets();
    const list = el("assets");
    list.innerHTML = "";
    for (const a of assets) {
      const li = document.createElement("li");
      li.textContent = `${a.asset_id} (${a.status}, ${a.n_parts} parts, ${a.edits} edits)`;
      li.onclick = () => void loadAsset(a.asset_id).catch(showError);
      list.appendChild(li);
    }
  }

  function showError(err: unknown): void {
    const message =
      err instanceof ApiError ? `${err.message} — ${err.remediation}` : String(err);
    dispatch({ kind: "edit-failed", message });
  }

  function buildEditBody(): EditBody {
    const p = state.pending;
    const condition: EditCondition | undefined = (() => {
      if (p.candidate !== null && state.retrievals[p.candidate]) {
        return { reference_part: { asset_id: state.retrievals[p.candidate].asset_id, part_id: 0 } };
      }
      if (p.conditionLabel) return { label: p.conditionLabel };
      return undefined;
    })();
    if (p.op === "compose") {
      return {
        op: "compose",
        target_parts: state.composeGroups,
        conditions: state.composeGroups.map(() => condition ?? {}),
      };
    }
    return { op: p.op, target_parts: [...state.selected], condition, alpha: p.alpha };
  }

  async function submitEdit(): Promise<void> {
    if (!state.assetId || !canSubmit(state)) return;
    const id = state.assetId;
    dispatch({ kind: "edit-started" });
    try {
      const res = await client.edit(id, buildEditBody());
      if (res.accepted) {
        dispatch({
          kind: "edit-applied",
          mesh: res.meshes,
          history: (await client.asset(id)).history,
          metrics: res.metrics,
        });
      } else {
        dispatch({ kind: "edit-rejected", retries: res.retries_used });
      }
    } catch (err) {
      showError(err);
    }
  }

  async function submitUndo(): Promise<void> {
    if (!state.assetId) return;
    const id = state.assetId;
    try {
      const res = await client.undo(id);
      dispatch({
        kind: "undo-applied",
        mesh: res.meshes,
        history: (await client.asset(id)).history,
      });
    } catch (err) {
      showError(err);
    }
  }

  async function submitGenerate(): Promise<void> {
    const seed = Number(el<HTMLInputElement>("gen-seed").value) || 0;
    const parts = Number(el<HTMLInputElement>("gen-parts").value) || 4;
    try {
      const { asset_id } = await client.generate(seed, parts);
      // poll until the asset leaves "generating"
      for (;;) {
        const detail = await client.asset(asset_id);
        if (detail.status !== "generating") break;
        await new Promise((r) => setTimeout(r, 500));
      }
      await refreshAssets();
      await loadAsset(asset_id);
    } catch (err) {
      showError(err);
    }
  }

  canvas.addEventListener("click", (e) => {
    const r = canvas.getBoundingClientRect();
    const picked = viewer.pick({
      x: ((e.clientX - r.left) / r.width) * 2 - 1,
      y: -(((e.clientY - r.top) / r.height) * 2 - 1),
    });
    if (picked !== null) dispatch({ kind: "toggle-select", partId: picked });
  });
  // simple orbit: drag rotates the camera around the origin
  let dragging = false;
  let last = { x: 0, y: 0 };
  canvas.addEventListener("mousedown", (e) => {
    dragging = true;
    last = { x: e.clientX, y: e.clientY };
  });
  window.addEventListener("mouseup", () => (dragging = false));
  canvas.addEventListener("mousemove", (e) => {
    if (!dragging) return;
    const dx = (e.clientX - last.x) * 0.01;
    const dy = (e.clientY - last.y) * 0.01;
    last = { x: e.clientX, y: e.clientY };
    const cam = viewer.camera;
    const sph = new THREE.Spherical().setFromVector3(cam.position);
    sph.theta -= dx;
    sph.phi = Math.min(Math.PI - 0.05, Math.max(0.05, sph.phi + dy));
    cam.position.setFromSpherical(sph);
    cam.lookAt(0, 0, 0);
    render();
  });
  canvas.addEventListener("wheel", (e) => {
    e.preventDefault();
    viewer.camera.position.multiplyScalar(e.deltaY > 0 ? 1.08 : 0.92);
    render();
  });

  el("explode").oninput = (e) =>
    dispatch({ kind: "set-exploded", value: Number((e.target as HTMLInputElement).value) });
  el("alpha").oninput = (e) =>
    dispatch({ kind: "set-alpha", alpha: Number((e.target as HTMLInputElement).value) });
  el("op").onchange = (e) =>
    dispatch({ kind: "set-op", op: (e.target as HTMLSelectElement).value as never });
  el("condition-label").onchange = (e) =>
    dispatch({ kind: "set-condition-label", label: (e.target as HTMLInputElement).value || null });
  el("commit-group").onclick = () => dispatch({ kind: "commit-compose-group" });
  el("clear-selection").onclick = () => dispatch({ kind: "clear-selection" });
  el("submit-edit").onclick = () => void submitEdit();
  el("undo").onclick = () => void submitUndo();
  el("before-after").onclick = () => dispatch({ kind: "toggle-before-after" });
  el("dismiss-banner").onclick = () => dispatch({ kind: "dismiss-banner" });
  el("generate").onclick = () => void submitGenerate();
  el("refresh-assets").onclick = () => void refreshAssets().catch(showError);

  void refreshAssets().catch(showError);
  render();
}
