/** Thin fetch client for the serve-annotate endpoints. */

import { Progress, SceneClusters, Submission, SubmitResult } from "./model.js";
import {
  parseClusters,
  parseError,
  parseProgress,
  parseSceneList,
  parseSubmitResult,
  serializeSubmission,
} from "./records.js";

export class ApiClient {
  constructor(private readonly baseUrl: string = "") {}

  private async getText(path: string): Promise<string> {
    const resp = await fetch(this.baseUrl + path);
    const body = await resp.text();
    if (!resp.ok) throw parseError(resp.status, body);
    return body;
  }

  async scenes(): Promise<string[]> {
    return parseSceneList(await this.getText("/api/scenes"));
  }

  async clusters(sceneId: string): Promise<SceneClusters> {
    return parseClusters(await this.getText(`/api/clusters/${sceneId}`));
  }

  async progress(): Promise<Progress> {
    return parseProgress(await this.getText("/api/progress"));
  }

  async submit(sceneId: string, submission: Submission): Promise<SubmitResult> {
    const resp = await fetch(`${this.baseUrl}/api/labels/${sceneId}`, {
      method: "POST",
      headers: { "Content-Type": "text/plain; charset=utf-8" },
      body: serializeSubmission(submission),
    });
    const body = await resp.text();
    if (!resp.ok) throw parseError(resp.status, body);
    return parseSubmitResult(sceneId, body);
  }
}
