/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    cell_count(): number;
    /**
     * RGBA pixels of the noiseless image.
     */
    clean_rgba(): Uint8Array;
    /**
     * Runs BM3D; returns JSON `{sigma, psnr_before_db, psnr_after_db}`.
     */
    denoise(sigma: number): string;
    denoised_rgba(): Uint8Array | undefined;
    /**
     * Synthetic field of `n_cells` rods on a `size` x `size` image.
     */
    constructor(size: number, n_cells: number, frames: number, seed: number);
    /**
     * RGBA overlay of the current masks on the denoised image.
     */
    overlay_rgba(): Uint8Array;
    /**
     * Proposes, refines and measures masks; returns a JSON summary with
     * per-cell features and the error rate against the known cells.
     */
    segment(grid_n: number, iou: number, min_area: number, max_area: number): string;
    size(): number;
    /**
     * RGBA pixels of the stacked image, for `ImageData`.
     */
    stacked_rgba(): Uint8Array;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_cell_count: (a: number) => number;
    readonly demo_clean_rgba: (a: number) => [number, number];
    readonly demo_denoise: (a: number, b: number) => [number, number, number, number];
    readonly demo_denoised_rgba: (a: number) => [number, number];
    readonly demo_new: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly demo_overlay_rgba: (a: number) => [number, number, number, number];
    readonly demo_segment: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly demo_size: (a: number) => number;
    readonly demo_stacked_rgba: (a: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
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
