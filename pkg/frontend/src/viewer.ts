/**
 * three.js scene construction and per-part picking.
 *
 * Geometry is rebuilt from server payloads only; the exploded view and
 * selection highlight are display transforms on top of untouched buffers.
 */

import * as THREE from "three";
import type { MeshPart, MeshPayload } from "./api.js";
import { explodeOffsets } from "./explode.js";

export function buildPartGeometry(part: MeshPart): THREE.BufferGeometry {
  // non-indexed triangle soup so flat shading shows crisp primitive edges
  const pos = new Float32Array(part.faces.length * 9);
  let o = 0;
  for (const [a, b, c] of part.faces) {
    for (const vi of [a, b, c]) {
      const v = part.vertices[vi];
      pos[o++] = v[0];
      pos[o++] = v[1];
      pos[o++] = v[2];
    }
  }
  const geo = new THREE.BufferGeometry();
  geo.setAttribute("position", new THREE.BufferAttribute(pos, 3));
  geo.computeVertexNormals();
  return geo;
}

export interface PartMeshes {
  group: THREE.Group;
  byPartId: Map<number, THREE.Mesh>;
}

export function buildPartMeshes(payload: MeshPayload): PartMeshes {
  const group = new THREE.Group();
  const byPartId = new Map<number, THREE.Mesh>();
  for (const part of payload.parts) {
    const mat = new THREE.MeshStandardMaterial({
      color: new THREE.Color(part.color),
      flatShading: true,
    });
    const mesh = new THREE.Mesh(buildPartGeometry(part), mat);
    mesh.userData.partId = part.part_id;
    group.add(mesh);
    byPartId.set(part.part_id, mesh);
  }
  return { group, byPartId };
}

export function applyExplode(parts: MeshPayload, meshes: PartMeshes, factor: number): void {
  const offsets = explodeOffsets(parts.parts, factor);
  parts.parts.forEach((part, i) => {
    const mesh = meshes.byPartId.get(part.part_id);
    if (mesh) mesh.position.set(offsets[i][0], offsets[i][1], offsets[i][2]);
  });
}

export function applySelection(meshes: PartMeshes, selected: number[]): void {
  const chosen = new Set(selected);
  for (const [pid, mesh] of meshes.byPartId) {
    const mat = mesh.material as THREE.MeshStandardMaterial;
    mat.emissive.set(chosen.has(pid) ? 0x404040 : 0x000000);
  }
}

/** Part id under a normalized device coordinate, or null. */
export function pickPart(
  meshes: PartMeshes,
  camera: THREE.Camera,
  ndc: { x: number; y: number },
): number | null {
  const ray = new THREE.Raycaster();
  ray.setFromCamera(new THREE.Vector2(ndc.x, ndc.y), camera);
  const hits = ray.intersectObjects([...meshes.byPartId.values()], false);
  if (hits.length === 0) return null;
  return hits[0].object.userData.partId as number;
}

export interface ViewerHandle {
  scene: THREE.Scene;
  camera: THREE.PerspectiveCamera;
  setPayload(payload: MeshPayload): void;
  setExploded(factor: number): void;
  setSelected(selected: number[]): void;
  pick(ndc: { x: number; y: number }): number | null;
  render(renderer: THREE.WebGLRenderer): void;
}

export function createViewer(aspect = 1): ViewerHandle {
  const scene = new THREE.Scene();
  scene.background = new THREE.Color(0x181a1f);
  scene.add(new THREE.AmbientLight(0xffffff, 0.6));
  const sun = new THREE.DirectionalLight(0xffffff, 1.2);
  sun.position.set(2, 3, 4);
  scene.add(sun);
  const camera = new THREE.PerspectiveCamera(45, aspect, 0.01, 100);
  camera.position.set(2.2, 1.6, 2.2);
  camera.lookAt(0, 0, 0);

  let current: PartMeshes | null = null;
  let payload: MeshPayload | null = null;

  return {
    scene,
    camera,
    setPayload(p: MeshPayload) {
      if (current) scene.remove(current.group);
      payload = p;
      current = buildPartMeshes(p);
      scene.add(current.group);
    },
    setExploded(factor: number) {
      if (current && payload) applyExplode(payload, current, factor);
    },
    setSelected(selected: number[]) {
      if (current) applySelection(current, selected);
    },
    pick(ndc) {
      return current ? pickPart(current, camera, ndc) : null;
    },
    render(renderer: THREE.WebGLRenderer) {
      renderer.render(scene, camera);
    },
  };
}
