/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Generates a world, learns its slot weights and trains the fusion model
     * on a held-out twin.
     */
    constructor(seed: bigint, cameras: number, vehicles: number, hours: number, noiseless: boolean);
    /**
     * Cameras, roads and query candidates.
     */
    overview(): string;
    /**
     * Layer-by-layer snapshots of a pivot search from `camera:track`.
     */
    search(camera: number, track: number, window_s: number, max_hops: number, k: number, mode: string): string;
    /**
     * Learned per-slot travel time of one road segment.
     */
    slot_curve(from: number, to: number): string;
    /**
     * Spatio-temporal similarity on an `n x n` grid.
     */
    st_heatmap(d_s_max: number, d_t_max: number, n: number): string;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_new: (a: bigint, b: number, c: number, d: number, e: number) => [number, number, number];
    readonly demo_overview: (a: number) => [number, number, number, number];
    readonly demo_search: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number, number];
    readonly demo_slot_curve: (a: number, b: number, c: number) => [number, number, number, number];
    readonly demo_st_heatmap: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
