// three.js skeleton viewer: joint spheres + bone segments, ground grid,
// constraint highlighting per the timeline's items.

import * as THREE from 'three';

import { bonePairs, constraintOverlay, frameAt } from './playback.js';
import type { ConstraintItem, MotionDocument, SkeletonDocument } from './types.js';

const JOINT_COLOR = 0x4a90d9;
const CONSTRAINED_COLOR = 0xd0342c;
const BONE_COLOR = 0x9fb9d0;

export class SkeletonViewer {
  private scene = new THREE.Scene();
  private camera: THREE.PerspectiveCamera;
  private renderer: THREE.WebGLRenderer;
  private joints: THREE.Mesh[] = [];
  private bones: THREE.Line[] = [];
  private pairs: [number, number][] = [];
  private waypointMarkers = new THREE.Group();
  private motion: MotionDocument | null = null;
  private skeleton: SkeletonDocument | null = null;
  private constraints: ConstraintItem[] = [];
  private clockStart = 0;
  playing = false;
  timeS = 0;

  constructor(private container: HTMLElement) {
    this.camera = new THREE.PerspectiveCamera(
      50,
      container.clientWidth / Math.max(container.clientHeight, 1),
      0.01,
      100,
    );
    this.camera.position.set(2.5, 1.8, 2.5);
    this.camera.lookAt(0, 0.8, 0);
    this.renderer = new THREE.WebGLRenderer({ antialias: true });
    this.renderer.setSize(container.clientWidth, container.clientHeight);
    container.appendChild(this.renderer.domElement);

    this.scene.background = new THREE.Color(0x15181d);
    this.scene.add(new THREE.AmbientLight(0xffffff, 0.8));
    const sun = new THREE.DirectionalLight(0xffffff, 1.2);
    sun.position.set(3, 6, 2);
    this.scene.add(sun);
    this.scene.add(new THREE.GridHelper(10, 20, 0x444444, 0x2a2e35));
    this.scene.add(this.waypointMarkers);

    const animate = (t: number) => {
      requestAnimationFrame(animate);
      this.tick(t / 1000);
      this.renderer.render(this.scene, this.camera);
    };
    requestAnimationFrame(animate);
  }

  setSkeleton(skeleton: SkeletonDocument): void {
    this.skeleton = skeleton;
    this.joints.forEach((m) => this.scene.remove(m));
    this.bones.forEach((b) => this.scene.remove(b));
    this.joints = skeleton.joint_names.map(() => {
      const mesh = new THREE.Mesh(
        new THREE.SphereGeometry(0.025, 12, 12),
        new THREE.MeshStandardMaterial({ color: JOINT_COLOR }),
      );
      this.scene.add(mesh);
      return mesh;
    });
    this.pairs = bonePairs(skeleton.parent_index);
    this.bones = this.pairs.map(() => {
      const geometry = new THREE.BufferGeometry().setFromPoints([
        new THREE.Vector3(),
        new THREE.Vector3(),
      ]);
      const line = new THREE.Line(
        geometry,
        new THREE.LineBasicMaterial({ color: BONE_COLOR }),
      );
      this.scene.add(line);
      return line;
    });
  }

  setMotion(motion: MotionDocument): void {
    this.motion = motion;
    this.timeS = 0;
  }

  setConstraints(items: ConstraintItem[]): void {
    this.constraints = items;
    this.waypointMarkers.clear();
    for (const item of items) {
      if (item.kind === 'waypoint' && item.position) {
        const marker = new THREE.Mesh(
          new THREE.ConeGeometry(0.06, 0.18, 12),
          new THREE.MeshStandardMaterial({ color: CONSTRAINED_COLOR }),
        );
        marker.position.set(item.position[0], 0.09, item.position[1]);
        this.waypointMarkers.add(marker);
      }
      if (item.kind === 'dense_path' && item.positions) {
        const points = item.positions.map(
          (p) => new THREE.Vector3(p[0], 0.02, p[1]),
        );
        const line = new THREE.Line(
          new THREE.BufferGeometry().setFromPoints(points),
          new THREE.LineBasicMaterial({ color: CONSTRAINED_COLOR }),
        );
        this.waypointMarkers.add(line);
      }
    }
  }

  play(): void {
    this.playing = true;
    this.clockStart = -1;
  }

  pause(): void {
    this.playing = false;
  }

  scrub(timeS: number): void {
    this.timeS = timeS;
    this.playing = false;
  }

  private tick(nowS: number): void {
    if (!this.motion || !this.skeleton) return;
    if (this.playing) {
      if (this.clockStart < 0) this.clockStart = nowS - this.timeS;
      this.timeS = nowS - this.clockStart;
      const total = this.motion.n_frames / this.motion.fps;
      if (this.timeS > total) this.timeS -= total * Math.floor(this.timeS / total);
    }
    const frame = frameAt(this.motion, this.timeS);
    const pose = this.motion.joint_positions[frame];
    const overlay = constraintOverlay(
      this.constraints,
      frame,
      this.skeleton.joint_names,
      this.skeleton.foot_joint_indices,
    );
    this.joints.forEach((mesh, i) => {
      mesh.position.set(pose[i][0], pose[i][1], pose[i][2]);
      const material = mesh.material as THREE.MeshStandardMaterial;
      material.color.setHex(
        overlay.constrainedJoints.has(i) ? CONSTRAINED_COLOR : JOINT_COLOR,
      );
    });
    this.bones.forEach((line, k) => {
      const [a, b] = this.pairs[k];
      const positions = line.geometry.getAttribute('position') as THREE.BufferAttribute;
      positions.setXYZ(0, pose[a][0], pose[a][1], pose[a][2]);
      positions.setXYZ(1, pose[b][0], pose[b][1], pose[b][2]);
      positions.needsUpdate = true;
    });
  }
}
