/* tslint:disable */
/* eslint-disable */

export class Lab {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * JSON `[[[word, memorized], ...], ...]`.
     */
    highlight(max_sequences: number): string;
    /**
     * Uses `text` when it is non-empty, otherwise a synthetic corpus of
     * `documents` documents.
     */
    constructor(text: string, documents: number, preset: string, epochs: number, lr: number, seed: bigint);
    /**
     * JSON `{epoch, m, mean_unit_len, mean_loss}`.
     */
    trainEpoch(): string;
    readonly finished: boolean;
    readonly summary: string;
}

/**
 * Flattened `[t0, lr0, t1, lr1, ...]`.
 */
export function scheduleCurve(max_lr: number, warmup_fraction: number, total_tokens: number, points: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_lab_free: (a: number, b: number) => void;
    readonly lab_finished: (a: number) => number;
    readonly lab_highlight: (a: number, b: number) => [number, number, number, number];
    readonly lab_new: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: bigint) => [number, number, number];
    readonly lab_summary: (a: number) => [number, number];
    readonly lab_trainEpoch: (a: number) => [number, number, number, number];
    readonly scheduleCurve: (a: number, b: number, c: number, d: number) => [number, number, number, number];
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
