/** Annotation session state machine.
 *
 * The UI drives this with cluster selection, class palette clicks and point
 * picks; it produces schema-valid submissions, applies status changes
 * optimistically and rolls them back when the server rejects. At most one
 * submission is in flight.
 */

import { ClusterStatus, ClusterView, SceneClusters, Submission } from "./model.js";
import { validateSubmission } from "./records.js";

export interface PendingSubmission {
  submission: Submission;
  previousStatus: ClusterStatus;
}

export class Session {
  scene: SceneClusters | null = null;
  activeClusterId: number | null = null;
  activeClassId: number | null = null;
  /** mixed-mode picks: class id -> point index */
  picks = new Map<number, number>();
  inFlight = false;
  private requestCounter = 0;

  loadScene(scene: SceneClusters): void {
    this.scene = scene;
    this.activeClusterId = null;
    this.activeClassId = null;
    this.picks.clear();
    this.inFlight = false;
  }

  cluster(id: number | null = null): ClusterView | null {
    const target = id ?? this.activeClusterId;
    if (this.scene === null || target === null) return null;
    return this.scene.clusters.find((c) => c.id === target) ?? null;
  }

  selectCluster(id: number): void {
    if (!this.cluster(id)) return;
    this.activeClusterId = id;
    this.activeClassId = null;
    this.picks.clear();
  }

  nextPendingCluster(direction: 1 | -1 = 1): number | null {
    if (!this.scene) return null;
    const ids = this.scene.clusters.map((c) => c.id);
    if (ids.length === 0) return null;
    const start = this.activeClusterId ?? ids[0];
    const at = Math.max(ids.indexOf(start), 0);
    const len = ids.length;
    for (let step = 1; step <= len; step++) {
      const candidate = this.scene.clusters[(((at + direction * step) % len) + len) % len];
      if (candidate.status === "pending") return candidate.id;
    }
    return null;
  }

  selectClass(classId: number): void {
    if (!this.scene || !this.scene.classes.some((c) => c.id === classId)) return;
    this.activeClassId = classId;
  }

  /** Mixed-mode point pick: assigns the picked point to the active class. */
  pickPoint(pointIndex: number): boolean {
    const cluster = this.cluster();
    if (!cluster || this.activeClassId === null) return false;
    if (!cluster.points.some((p) => p.index === pointIndex)) return false;
    this.picks.set(this.activeClassId, pointIndex);
    return true;
  }

  clearPicks(): void {
    this.picks.clear();
  }

  /** A pure submission when only a class is chosen, mixed when >= 2 picks. */
  buildSubmission(): Submission | string {
    const cluster = this.cluster();
    if (!cluster) return "select a cluster first";
    if (this.inFlight) return "a submission is already in flight";
    if (cluster.status !== "pending") return "cluster already labeled";
    let submission: Submission;
    if (this.picks.size === 0) {
      if (this.activeClassId === null) return "pick a class (pure) or points (mixed)";
      submission = {
        requestId: `ui-${cluster.id}-${this.requestCounter++}`,
        clusterId: cluster.id,
        mode: "pure",
        assignments: [{ classId: this.activeClassId }],
      };
    } else {
      const assignments = [...this.picks.entries()]
        .sort((a, b) => a[0] - b[0])
        .map(([classId, pointIndex]) => ({ classId, pointIndex }));
      submission = {
        requestId: `ui-${cluster.id}-${this.requestCounter++}`,
        clusterId: cluster.id,
        mode: "mixed",
        assignments,
      };
    }
    const problem = validateSubmission(submission);
    return problem === null ? submission : problem;
  }

  /** Optimistic local status flip; returns what a rollback needs. */
  applyOptimistic(submission: Submission): PendingSubmission | null {
    const cluster = this.cluster(submission.clusterId);
    if (!cluster) return null;
    const previousStatus = cluster.status;
    cluster.status = submission.mode === "pure" ? "pure-labeled" : "mixed-labeled";
    this.inFlight = true;
    return { submission, previousStatus };
  }

  confirm(_pending: PendingSubmission): void {
    this.inFlight = false;
    this.picks.clear();
    this.activeClassId = null;
  }

  rollback(pending: PendingSubmission): void {
    const cluster = this.cluster(pending.submission.clusterId);
    if (cluster) cluster.status = pending.previousStatus;
    this.inFlight = false;
  }
}
