/** Shared types mirroring the serve-annotate text-record schema (docs/api.md). */

export type ClusterStatus = "pending" | "pure-labeled" | "mixed-labeled";

export interface ClassInfo {
  id: number;
  name: string;
  color: string; // #rrggbb
}

export interface ScatterPoint {
  index: number;
  x: number;
  y: number;
  z: number;
}

export interface CropReference {
  camera: number;
  u0: number;
  v0: number;
  u1: number;
  v1: number;
}

export interface ClusterView {
  id: number;
  count: number;
  status: ClusterStatus;
  bbox: [number, number, number, number];
  crop: CropReference | null;
  points: ScatterPoint[];
}

export interface SceneClusters {
  sceneId: string;
  numPoints: number;
  classes: ClassInfo[];
  clusters: ClusterView[];
}

export interface ProgressEntry {
  kind: string;
  count: number;
  rate: number;
}

export interface Progress {
  scenes: number;
  annotatedClusters: number;
  totalClusters: number;
  rates: ProgressEntry[];
}

export interface Assignment {
  classId: number;
  pointIndex?: number;
}

export interface Submission {
  requestId: string;
  clusterId: number;
  mode: "pure" | "mixed";
  assignments: Assignment[];
}

export interface SubmitResult {
  sceneId: string;
  clusterId: number;
  sparse: number;
  propagated: number;
  negative: number;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly category: string,
    message: string,
  ) {
    super(message);
  }
}
