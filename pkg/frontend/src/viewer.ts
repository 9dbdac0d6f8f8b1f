/** three.js viewport: shows the inferred mesh, orbits/zooms with the
 * pointer, and starts from the server's predicted pose. */

import * as THREE from "three";

import { cameraPosition, clampOrbit, dragOrbit, zoomOrbit, OrbitState } from "./camera-math.js";
import { ParsedMesh } from "./obj-parser.js";
import { Pose } from "./api.js";

export class MeshViewer {
  private renderer: THREE.WebGLRenderer;
  private scene = new THREE.Scene();
  private root = new THREE.Group();
  private camera: THREE.PerspectiveCamera;
  private meshObject: THREE.Mesh | null = null;
  orbit: OrbitState = { azimuthDeg: 0, elevationDeg: 15, distance: 2.732 };

  constructor(private container: HTMLElement) {
    this.renderer = new THREE.WebGLRenderer({ antialias: true });
    this.renderer.setClearColor(0x10151c);
    this.camera = new THREE.PerspectiveCamera(40, 1, 0.05, 100);
    // the render convention is the mirror image of a lookAt camera
    this.root.scale.x = -1;
    this.scene.add(this.root);
    this.scene.add(new THREE.AmbientLight(0xffffff, 0.45));
    const key = new THREE.DirectionalLight(0xffffff, 1.1);
    key.position.set(2, 4, -3);
    this.scene.add(key);
    const fill = new THREE.DirectionalLight(0x88aaff, 0.4);
    fill.position.set(-3, -1, 2);
    this.scene.add(fill);
    this.scene.add(new THREE.GridHelper(4, 8, 0x334455, 0x223344));
    container.appendChild(this.renderer.domElement);
    this.attachControls();
    this.resize();
    window.addEventListener("resize", () => this.resize());
  }

  private attachControls(): void {
    const el = this.renderer.domElement;
    let dragging = false;
    let lastX = 0;
    let lastY = 0;
    el.addEventListener("pointerdown", (e) => {
      dragging = true;
      lastX = e.clientX;
      lastY = e.clientY;
      el.setPointerCapture(e.pointerId);
    });
    el.addEventListener("pointermove", (e) => {
      if (!dragging) return;
      this.orbit = dragOrbit(this.orbit, e.clientX - lastX, e.clientY - lastY);
      lastX = e.clientX;
      lastY = e.clientY;
      this.render();
    });
    el.addEventListener("pointerup", () => (dragging = false));
    el.addEventListener("wheel", (e) => {
      e.preventDefault();
      this.orbit = zoomOrbit(this.orbit, e.deltaY);
      this.render();
    }, { passive: false });
  }

  resize(): void {
    const w = this.container.clientWidth || 480;
    const h = this.container.clientHeight || 480;
    this.renderer.setSize(w, h, false);
    this.camera.aspect = w / h;
    this.camera.updateProjectionMatrix();
    this.render();
  }

  /** Replace the displayed mesh in place (no page reload). */
  showMesh(parsed: ParsedMesh, pose: Pose): void {
    if (this.meshObject) {
      this.root.remove(this.meshObject);
      this.meshObject.geometry.dispose();
      (this.meshObject.material as THREE.Material).dispose();
    }
    const geo = new THREE.BufferGeometry();
    geo.setAttribute("position", new THREE.BufferAttribute(parsed.positions, 3));
    geo.setIndex(new THREE.BufferAttribute(parsed.indices, 1));
    geo.computeVertexNormals();
    const mat = new THREE.MeshStandardMaterial({
      color: 0x7fb4e6, roughness: 0.55, metalness: 0.05,
      side: THREE.DoubleSide, flatShading: false,
    });
    this.meshObject = new THREE.Mesh(geo, mat);
    this.root.add(this.meshObject);
    this.orbit = clampOrbit({
      azimuthDeg: pose.azimuth_deg,
      elevationDeg: pose.elevation_deg,
      distance: pose.distance,
    });
    this.render();
  }

  render(): void {
    const [x, y, z] = cameraPosition(this.orbit);
    this.camera.position.set(x, y, z);
    this.camera.up.set(0, 1, 0);
    this.camera.lookAt(0, 0, 0);
    this.renderer.render(this.scene, this.camera);
  }
}
