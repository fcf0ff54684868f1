import { describe, expect, it } from "vitest";

import {
  parseClusters,
  parseError,
  parseProgress,
  parseSceneList,
  parseSubmitResult,
  serializeSubmission,
  validateSubmission,
} from "../src/records.js";
import { Submission } from "../src/model.js";

const CLUSTERS_BODY = [
  "scene id=00001 points=2840 classes=3",
  "class id=0 name=ground color=#737373",
  "class id=1 name=box_1 color=#b74c4c",
  "class id=2 name=cylinder_2 color=#9e9e4c",
  "cluster id=0 count=3 status=pending bbox=-1.0,-2.0,3.5,4.0 crop camera=2 u0=4.0 v0=1.0 u1=9.5 v1=7.0",
  "point cluster=0 index=10 x=-1.000 y=-2.000 z=0.100",
  "point cluster=0 index=11 x=3.500 y=4.000 z=0.900",
  "point cluster=0 index=12 x=1.000 y=0.500 z=0.500",
  "cluster id=1 count=2 status=pure-labeled bbox=5.0,5.0,6.0,6.0",
  "point cluster=1 index=20 x=5.000 y=5.000 z=0.200",
  "point cluster=1 index=21 x=6.000 y=6.000 z=0.300",
  "",
].join("\n");

describe("record parsing", () => {
  it("parses the scene list", () => {
    expect(parseSceneList("scene id=00000\nscene id=00003\n")).toEqual(["00000", "00003"]);
  });

  it("parses clusters, classes, scatter and crop references", () => {
    const scene = parseClusters(CLUSTERS_BODY);
    expect(scene.sceneId).toBe("00001");
    expect(scene.numPoints).toBe(2840);
    expect(scene.classes).toHaveLength(3);
    expect(scene.classes[1]).toEqual({ id: 1, name: "box_1", color: "#b74c4c" });
    expect(scene.clusters).toHaveLength(2);
    const first = scene.clusters[0];
    expect(first.status).toBe("pending");
    expect(first.bbox).toEqual([-1.0, -2.0, 3.5, 4.0]);
    expect(first.crop).toEqual({ camera: 2, u0: 4.0, v0: 1.0, u1: 9.5, v1: 7.0 });
    expect(first.points.map((p) => p.index)).toEqual([10, 11, 12]);
    expect(scene.clusters[1].crop).toBeNull();
    expect(scene.clusters[1].status).toBe("pure-labeled");
  });

  it("rejects payloads without a scene record", () => {
    expect(() => parseClusters("cluster id=0 count=1 status=pending bbox=0,0,1,1\n")).toThrow();
  });

  it("parses progress records", () => {
    const progress = parseProgress(
      [
        "progress scenes=3 annotated_clusters=5 total_clusters=21",
        "progress kind=sparse count=12 rate=0.004211",
        "progress kind=coverage count=1497 rate=0.527099",
      ].join("\n"),
    );
    expect(progress.scenes).toBe(3);
    expect(progress.annotatedClusters).toBe(5);
    expect(progress.totalClusters).toBe(21);
    expect(progress.rates.map((r) => r.kind)).toEqual(["sparse", "coverage"]);
    expect(progress.rates[0].rate).toBeCloseTo(0.004211);
  });

  it("parses submit responses and error bodies", () => {
    const result = parseSubmitResult("00001", "ok scene=00001 cluster=3 sparse=2 propagated=0 negative=48\n");
    expect(result).toEqual({ sceneId: "00001", clusterId: 3, sparse: 2, propagated: 0, negative: 48 });
    const err = parseError(422, 'error category=invalid message="mixed mode needs >= 2 distinct classes"\n');
    expect(err.status).toBe(422);
    expect(err.category).toBe("invalid");
    expect(err.message).toContain("distinct classes");
  });
});

describe("submission serialization", () => {
  it("serializes pure submissions without a point", () => {
    const body = serializeSubmission({
      requestId: "r1",
      clusterId: 4,
      mode: "pure",
      assignments: [{ classId: 2 }],
    });
    expect(body).toBe("request id=r1\ncluster id=4\nmode pure\nassign class=2\n");
  });

  it("serializes mixed submissions with points", () => {
    const body = serializeSubmission({
      requestId: "r2",
      clusterId: 0,
      mode: "mixed",
      assignments: [
        { classId: 1, pointIndex: 17 },
        { classId: 3, pointIndex: 23 },
      ],
    });
    expect(body).toBe(
      "request id=r2\ncluster id=0\nmode mixed\nassign class=1 point=17\nassign class=3 point=23\n",
    );
  });

  it("validates against the documented schema rules", () => {
    const pure: Submission = { requestId: "x", clusterId: 0, mode: "pure", assignments: [{ classId: 1 }] };
    expect(validateSubmission(pure)).toBeNull();
    expect(
      validateSubmission({ ...pure, assignments: [{ classId: 1 }, { classId: 2 }] }),
    ).toMatch(/exactly one/);
    expect(
      validateSubmission({ requestId: "x", clusterId: 0, mode: "mixed", assignments: [{ classId: 1, pointIndex: 5 }] }),
    ).toMatch(/>= 2 assignments/);
    expect(
      validateSubmission({
        requestId: "x",
        clusterId: 0,
        mode: "mixed",
        assignments: [
          { classId: 1, pointIndex: 5 },
          { classId: 1, pointIndex: 6 },
        ],
      }),
    ).toMatch(/distinct classes/);
    expect(
      validateSubmission({
        requestId: "x",
        clusterId: 0,
        mode: "mixed",
        assignments: [{ classId: 1, pointIndex: 5 }, { classId: 2 }],
      }),
    ).toMatch(/point per class/);
  });
});
