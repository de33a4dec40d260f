/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const pair_similarity: (a: number, b: number) => [number, number];
export const pvi_histogram: (a: number, b: number) => [number, number];
export const seed_ci: (a: number, b: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
