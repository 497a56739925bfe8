/**
 * Scene state as a pure reducer over (server responses, user input).
 *
 * Replaying the same event log always reproduces the same state; nothing
 * here touches the network or the DOM.
 */

import type { MeshPayload, Retrieval } from "./api.js";

export type EditOp = "swap" | "refine" | "compose";

export interface PendingEdit {
  op: EditOp;
  alpha: number;
  /** chosen swap candidate (index into the candidate list), if any */
  candidate: number | null;
  conditionLabel: string | null;
}

export interface SceneState {
  assetId: string | null;
  mesh: MeshPayload | null;
  /** mesh before the most recent accepted edit, for the before/after toggle */
  previousMesh: MeshPayload | null;
  showBefore: boolean;
  selected: number[];
  /** compose groups committed so far (selection becomes a group on "add") */
  composeGroups: number[][];
  exploded: number;
  pending: PendingEdit;
  /** mirrors the server's edit history exactly */
  history: unknown[];
  retrievals: Retrieval[];
  metrics: Record<string, number> | null;
  banner: string | null;
  busy: boolean;
}

export function initialState(): SceneState {
  return {
    assetId: null,
    mesh: null,
    previousMesh: null,
    showBefore: false,
    selected: [],
    composeGroups: [],
    exploded: 0,
    pending: { op: "swap", alpha: 0.5, candidate: null, conditionLabel: null },
    history: [],
    retrievals: [],
    metrics: null,
    banner: null,
    busy: false,
  };
}

export type Event =
  | { kind: "asset-loaded"; assetId: string; mesh: MeshPayload; history: unknown[]; retrievals: Retrieval[] }
  | { kind: "toggle-select"; partId: number }
  | { kind: "clear-selection" }
  | { kind: "commit-compose-group" }
  | { kind: "set-exploded"; value: number }
  | { kind: "set-op"; op: EditOp }
  | { kind: "set-alpha"; alpha: number }
  | { kind: "pick-candidate"; index: number }
  | { kind: "set-condition-label"; label: string | null }
  | { kind: "edit-started" }
  | { kind: "edit-applied"; mesh: MeshPayload; history: unknown[]; metrics: Record<string, number> }
  | { kind: "edit-rejected"; retries: number }
  | { kind: "edit-failed"; message: string }
  | { kind: "undo-applied"; mesh: MeshPayload; history: unknown[] }
  | { kind: "toggle-before-after" }
  | { kind: "dismiss-banner" };

function partIds(mesh: MeshPayload | null): Set<number> {
  return new Set((mesh?.parts ?? []).map((p) => p.part_id));
}

export function reduce(state: SceneState, ev: Event): SceneState {
  switch (ev.kind) {
    case "asset-loaded":
      return {
        ...initialState(),
        assetId: ev.assetId,
        mesh: ev.mesh,
        history: ev.history,
        retrievals: ev.retrievals,
      };
    case "toggle-select": {
      if (!partIds(state.mesh).has(ev.partId)) return state; // only existing ids
      const selected = state.selected.includes(ev.partId)
        ? state.selected.filter((i) => i !== ev.partId)
        : [...state.selected, ev.partId];
      return { ...state, selected };
    }
    case "clear-selection":
      return { ...state, selected: [], composeGroups: [] };
    case "commit-compose-group": {
      if (state.selected.length === 0) return state;
      const taken = new Set(state.composeGroups.flat());
      if (state.selected.some((i) => taken.has(i))) return state; // disjoint
      return {
        ...state,
        composeGroups: [...state.composeGroups, [...state.selected].sort((a, b) => a - b)],
        selected: [],
      };
    }
    case "set-exploded":
      return { ...state, exploded: Math.min(1, Math.max(0, ev.value)) };
    case "set-op":
      return { ...state, pending: { ...state.pending, op: ev.op } };
    case "set-alpha":
      return { ...state, pending: { ...state.pending, alpha: Math.min(1, Math.max(0, ev.alpha)) } };
    case "pick-candidate":
      return { ...state, pending: { ...state.pending, candidate: ev.index } };
    case "set-condition-label":
      return { ...state, pending: { ...state.pending, conditionLabel: ev.label } };
    case "edit-started":
      return { ...state, busy: true, banner: null };
    case "edit-applied":
      return {
        ...state,
        busy: false,
        previousMesh: state.mesh,
        mesh: ev.mesh,
        history: ev.history,
        metrics: ev.metrics,
        showBefore: false,
        selected: [],
        composeGroups: [],
      };
    case "edit-rejected":
      return {
        ...state,
        busy: false,
        banner: `Edit rejected by semantic validation after ${ev.retries} retries; try another condition.`,
      };
    case "edit-failed":
      return { ...state, busy: false, banner: ev.message };
    case "undo-applied":
      return {
        ...state,
        busy: false,
        mesh: ev.mesh,
        history: ev.history,
        previousMesh: null,
        metrics: null,
        showBefore: false,
      };
    case "toggle-before-after":
      if (!state.previousMesh) return state;
      return { ...state, showBefore: !state.showBefore };
    case "dismiss-banner":
      return { ...state, banner: null };
  }
}

/** Replay an event log from scratch; the view is a pure function of it. */
export function replay(events: Event[]): SceneState {
  return events.reduce(reduce, initialState());
}

export function displayedMesh(state: SceneState): MeshPayload | null {
  return state.showBefore && state.previousMesh ? state.previousMesh : state.mesh;
}

export function canSubmit(state: SceneState): boolean {
  if (state.busy) return false;
  if (state.pending.op === "compose") return state.composeGroups.length >= 2;
  return state.selected.length > 0; // swap/refine need a nonempty selection
}

/** The swap candidate pool is the asset's top-k retrieval exemplars. */
export function swapCandidates(retrievals: Retrieval[], k: number): Retrieval[] {
  return retrievals.slice(0, k);
}
