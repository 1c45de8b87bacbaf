/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_augment: (a: number, b: bigint) => [number, number];
export const demo_degrade: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number, number];
export const demo_describe_augment: (a: number, b: bigint) => [number, number];
export const demo_gradcam: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const demo_labels: (a: number) => [number, number];
export const demo_load_checkpoint: (a: number, b: number, c: number) => [number, number];
export const demo_model_loaded: (a: number) => number;
export const demo_new: (a: number, b: bigint) => [number, number, number];
export const demo_predict: (a: number) => [number, number, number, number];
export const demo_reseed: (a: number, b: bigint) => [number, number];
export const demo_size: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
