/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_cell_count: (a: number) => number;
export const demo_clean_rgba: (a: number) => [number, number];
export const demo_denoise: (a: number, b: number) => [number, number, number, number];
export const demo_denoised_rgba: (a: number) => [number, number];
export const demo_new: (a: number, b: number, c: number, d: number) => [number, number, number];
export const demo_overlay_rgba: (a: number) => [number, number, number, number];
export const demo_segment: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const demo_size: (a: number) => number;
export const demo_stacked_rgba: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
