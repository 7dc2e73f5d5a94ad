/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_grid: (a: number) => [number, number];
export const demo_instruct: (a: number, b: number, c: number) => [number, number, number, number];
export const demo_layout: (a: number) => [number, number];
export const demo_new: (a: number, b: number, c: number, d: bigint) => [number, number, number];
export const demo_running: (a: number) => number;
export const demo_set_goal: (a: number, b: number, c: number) => [number, number, number, number];
export const demo_state: (a: number) => [number, number];
export const demo_step: (a: number, b: number) => [number, number];
export const parse: (a: number, b: number) => [number, number];
export const scenario_names: () => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
