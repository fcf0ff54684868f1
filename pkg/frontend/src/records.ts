/** Line-oriented text record codec for the serve-annotate API. */

import {
  ApiError,
  ClusterStatus,
  ClusterView,
  Progress,
  SceneClusters,
  Submission,
  SubmitResult,
} from "./model.js";

export function parseFields(parts: string[]): Record<string, string> {
  const fields: Record<string, string> = {};
  for (const part of parts) {
    const eq = part.indexOf("=");
    if (eq > 0) {
      fields[part.slice(0, eq)] = part.slice(eq + 1);
    }
  }
  return fields;
}

function requireNumber(fields: Record<string, string>, key: string, line: string): number {
  const value = Number(fields[key]);
  if (fields[key] === undefined || Number.isNaN(value)) {
    throw new Error(`record missing numeric ${key}: ${line}`);
  }
  return value;
}

export function parseSceneList(body: string): string[] {
  const out: string[] = [];
  for (const line of body.split("\n")) {
    if (line.startsWith("scene ")) {
      const fields = parseFields(line.split(" ").slice(1));
      if (fields.id !== undefined) out.push(fields.id);
    }
  }
  return out;
}

export function parseClusters(body: string): SceneClusters {
  const result: SceneClusters = { sceneId: "", numPoints: 0, classes: [], clusters: [] };
  let current: ClusterView | null = null;
  for (const raw of body.split("\n")) {
    const line = raw.trim();
    if (!line) continue;
    const parts = line.split(" ");
    const kind = parts[0];
    const fields = parseFields(parts.slice(1));
    if (kind === "scene") {
      result.sceneId = fields.id ?? "";
      result.numPoints = requireNumber(fields, "points", line);
    } else if (kind === "class") {
      result.classes.push({
        id: requireNumber(fields, "id", line),
        name: fields.name ?? `class_${fields.id}`,
        color: fields.color ?? "#888888",
      });
    } else if (kind === "cluster") {
      const bbox = (fields.bbox ?? "0,0,0,0").split(",").map(Number);
      current = {
        id: requireNumber(fields, "id", line),
        count: requireNumber(fields, "count", line),
        status: (fields.status ?? "pending") as ClusterStatus,
        bbox: [bbox[0], bbox[1], bbox[2], bbox[3]],
        crop:
          fields.camera !== undefined
            ? {
                camera: Number(fields.camera),
                u0: Number(fields.u0),
                v0: Number(fields.v0),
                u1: Number(fields.u1),
                v1: Number(fields.v1),
              }
            : null,
        points: [],
      };
      result.clusters.push(current);
    } else if (kind === "point") {
      const clusterId = requireNumber(fields, "cluster", line);
      const target =
        current && current.id === clusterId
          ? current
          : result.clusters.find((c) => c.id === clusterId);
      if (!target) throw new Error(`point record before its cluster: ${line}`);
      target.points.push({
        index: requireNumber(fields, "index", line),
        x: requireNumber(fields, "x", line),
        y: requireNumber(fields, "y", line),
        z: requireNumber(fields, "z", line),
      });
    }
  }
  if (!result.sceneId) throw new Error("clusters payload without a scene record");
  return result;
}

export function parseProgress(body: string): Progress {
  const progress: Progress = { scenes: 0, annotatedClusters: 0, totalClusters: 0, rates: [] };
  for (const line of body.split("\n")) {
    if (!line.startsWith("progress ")) continue;
    const fields = parseFields(line.split(" ").slice(1));
    if (fields.kind !== undefined) {
      progress.rates.push({
        kind: fields.kind,
        count: Number(fields.count ?? 0),
        rate: Number(fields.rate ?? 0),
      });
    } else {
      progress.scenes = Number(fields.scenes ?? 0);
      progress.annotatedClusters = Number(fields.annotated_clusters ?? 0);
      progress.totalClusters = Number(fields.total_clusters ?? 0);
    }
  }
  return progress;
}

/** Serialize a submission exactly as docs/api.md defines it. */
export function serializeSubmission(submission: Submission): string {
  const lines = [
    `request id=${submission.requestId}`,
    `cluster id=${submission.clusterId}`,
    `mode ${submission.mode}`,
  ];
  for (const assign of submission.assignments) {
    lines.push(
      assign.pointIndex === undefined
        ? `assign class=${assign.classId}`
        : `assign class=${assign.classId} point=${assign.pointIndex}`,
    );
  }
  return lines.join("\n") + "\n";
}

/** Client-side mirror of the server's submission rules. */
export function validateSubmission(submission: Submission): string | null {
  if (!Number.isInteger(submission.clusterId) || submission.clusterId < 0) {
    return "submission needs a cluster";
  }
  if (submission.assignments.length === 0) return "submission needs assignments";
  if (submission.mode === "pure") {
    if (submission.assignments.length !== 1) return "pure mode takes exactly one class";
    return null;
  }
  if (submission.mode === "mixed") {
    if (submission.assignments.length < 2) return "mixed mode needs >= 2 assignments";
    if (submission.assignments.some((a) => a.pointIndex === undefined)) {
      return "mixed mode needs a point per class";
    }
    const classes = new Set(submission.assignments.map((a) => a.classId));
    if (classes.size < 2) return "mixed mode needs >= 2 distinct classes";
    return null;
  }
  return "unknown mode";
}

export function parseSubmitResult(sceneId: string, body: string): SubmitResult {
  const line = body.split("\n").find((l) => l.startsWith("ok "));
  if (!line) throw new Error(`unexpected submit response: ${body}`);
  const fields = parseFields(line.split(" ").slice(1));
  return {
    sceneId,
    clusterId: Number(fields.cluster ?? -1),
    sparse: Number(fields.sparse ?? 0),
    propagated: Number(fields.propagated ?? 0),
    negative: Number(fields.negative ?? 0),
  };
}

export function parseError(status: number, body: string): ApiError {
  const line = body.split("\n").find((l) => l.startsWith("error ")) ?? "";
  const fields = parseFields(line.split(" ").slice(1));
  const message = /message="([^"]*)"/.exec(line)?.[1] ?? body.trim();
  return new ApiError(status, fields.category ?? "unknown", message);
}
