/* tslint:disable */
/* eslint-disable */

export class DemoFrame {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    info(): string;
    rgba(): Uint8Array;
    readonly height: number;
    readonly width: number;
}

/**
 * Ellipses are `(cx, cy, semi-major, semi-minor, angle in degrees)`.
 */
export function align(size: number, src_cx: number, src_cy: number, src_a: number, src_b: number, src_deg: number, dst_cx: number, dst_cy: number, dst_a: number, dst_b: number, dst_deg: number, literal_gamma: boolean): DemoFrame;

export function edges_generated(seed: number, size: number, speckle: number, k: number, wmin: number, wmax: number, nmin: number, nmax: number): DemoFrame;

export function edges_uploaded(width: number, height: number, rgba: Uint8Array, k: number, wmin: number, wmax: number, nmin: number, nmax: number): DemoFrame;

export function paste_and_blend(seed: number, size: number, speckle: number, n_syn: number, overlap_guard: boolean, literal_gamma: boolean): DemoFrame;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demoframe_free: (a: number, b: number) => void;
    readonly align: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number, j: number, k: number, l: number) => [number, number, number];
    readonly demoframe_height: (a: number) => number;
    readonly demoframe_info: (a: number) => [number, number];
    readonly demoframe_rgba: (a: number) => [number, number];
    readonly demoframe_width: (a: number) => number;
    readonly edges_generated: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number];
    readonly edges_uploaded: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number) => [number, number, number];
    readonly paste_and_blend: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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
