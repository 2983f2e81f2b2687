/** Typed client for the obdkit v1 HTTP API.
 *
 * The fetch implementation is injectable for tests. Errors are split into
 * validation (400), unknown id (404), terminated trial (409), and transport
 * failures, so the UI can put up the right banner.
 */

import type {
  AuditEvent,
  BoundariesResponse,
  CohortResponse,
  DesignConfig,
  DoseGrid,
  ExportBundle,
  ObdReport,
  PatientRecord,
  PriorSensitivityReport,
  Recommendation,
  SimulationJob,
  StateDocument,
  StrategyMap,
  TippingReport,
  UtilitySpec,
  WhatIfComparison,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
  }
}

export class TrialTerminatedError extends ApiError {
  constructor(message: string) {
    super(409, message);
  }
}

export class ServiceUnavailableError extends Error {
  constructor(cause: unknown) {
    super(`service unreachable: ${String(cause)}`);
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export interface CreateTrialBody {
  trial_id?: string;
  config: DesignConfig;
  utility: UtilitySpec;
  grid: DoseGrid;
  strategy_map?: StrategyMap;
  assignment_seed?: number;
}

export class ApiClient {
  constructor(
    readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    let resp: Response;
    try {
      resp = await this.fetchImpl(`${this.baseUrl}${path}`, {
        method,
        headers: body === undefined ? undefined : { "content-type": "application/json" },
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch (err) {
      throw new ServiceUnavailableError(err);
    }
    if (!resp.ok) {
      let message = `${resp.status}`;
      try {
        const payload = (await resp.json()) as { error?: string };
        if (payload.error) message = payload.error;
      } catch {
        /* non-JSON error body */
      }
      if (resp.status === 409) throw new TrialTerminatedError(message);
      throw new ApiError(resp.status, message);
    }
    return (await resp.json()) as T;
  }

  boundaries(phi: number, phi1?: number, phi2?: number): Promise<BoundariesResponse> {
    const params = new URLSearchParams({ phi: String(phi) });
    if (phi1 !== undefined) params.set("phi1", String(phi1));
    if (phi2 !== undefined) params.set("phi2", String(phi2));
    return this.request("GET", `/v1/boundaries?${params}`);
  }

  createTrial(body: CreateTrialBody): Promise<{ trial_id: string }> {
    return this.request("POST", "/v1/trials", body);
  }

  getTrial(trialId: string): Promise<StateDocument> {
    return this.request("GET", `/v1/trials/${encodeURIComponent(trialId)}`);
  }

  postCohort(trialId: string, records: PatientRecord[]): Promise<CohortResponse> {
    return this.request("POST", `/v1/trials/${encodeURIComponent(trialId)}/cohorts`, {
      records,
    });
  }

  recommendation(trialId: string): Promise<Recommendation> {
    return this.request("GET", `/v1/trials/${encodeURIComponent(trialId)}/recommendation`);
  }

  whatIf(
    trialId: string,
    body: { maps?: StrategyMap[]; utility?: UtilitySpec },
  ): Promise<WhatIfComparison> {
    return this.request("POST", `/v1/trials/${encodeURIComponent(trialId)}/whatif`, body);
  }

  obd(trialId: string): Promise<ObdReport> {
    return this.request("GET", `/v1/trials/${encodeURIComponent(trialId)}/obd`);
  }

  audit(trialId: string): Promise<{ trial_id: string; events: AuditEvent[] }> {
    return this.request("GET", `/v1/trials/${encodeURIComponent(trialId)}/audit`);
  }

  tipping(
    trialId: string,
    body: { flip_to?: number; mode?: string; exhaustive?: boolean } = {},
  ): Promise<TippingReport> {
    return this.request(
      "POST",
      `/v1/trials/${encodeURIComponent(trialId)}/sensitivity/tipping`,
      body,
    );
  }

  priorSensitivity(trialId: string, epsilon?: number): Promise<PriorSensitivityReport> {
    return this.request(
      "POST",
      `/v1/trials/${encodeURIComponent(trialId)}/sensitivity/prior`,
      epsilon === undefined ? {} : { epsilon },
    );
  }

  amendMap(trialId: string, map: StrategyMap): Promise<{ ok: boolean }> {
    return this.request("POST", `/v1/trials/${encodeURIComponent(trialId)}/map`, {
      strategy_map: map,
    });
  }

  submitSimulation(body: Record<string, unknown>): Promise<{ job_id: string }> {
    return this.request("POST", "/v1/simulations", body);
  }

  simulationStatus(jobId: string): Promise<SimulationJob> {
    return this.request("GET", `/v1/simulations/${encodeURIComponent(jobId)}`);
  }

  decisionTable(n: number, trialId?: string): Promise<{ columns: string[]; rows: unknown[][] }> {
    const params = new URLSearchParams({ n: String(n) });
    if (trialId) params.set("trial_id", trialId);
    return this.request("GET", `/v1/tables/decision?${params}`);
  }

  /** Export = state document plus the audit log it folds from. */
  async exportBundle(trialId: string): Promise<ExportBundle> {
    const state = await this.getTrial(trialId);
    const { events } = await this.audit(trialId);
    return { state, events };
  }

  /** Import = replay: recreate the design, then re-enter each recorded
   * cohort through the ordinary endpoint. The service's determinism makes
   * the new trial's recommendations match the exported ones. */
  async importBundle(bundle: ExportBundle, newTrialId?: string): Promise<string> {
    const created = await this.createTrial({
      trial_id: newTrialId,
      config: bundle.state.config,
      utility: bundle.state.utility,
      grid: bundle.state.grid,
      strategy_map: bundle.state.strategy_map,
    });
    for (const event of bundle.events) {
      if (event.kind === "cohort_entered") {
        await this.postCohort(created.trial_id, event.records as PatientRecord[]);
      } else if (event.kind === "map_amended") {
        await this.amendMap(created.trial_id, event.strategy_map as StrategyMap);
      }
    }
    return created.trial_id;
  }
}
