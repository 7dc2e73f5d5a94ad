/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Master costmap, row-major from the grid origin.
     */
    grid(): Uint8Array;
    /**
     * Replaces the directives; returns them as JSON.
     */
    instruct(text: string): string;
    /**
     * Bounds, grid geometry and the outlines to draw.
     */
    layout(): string;
    constructor(scenario: string, seed?: bigint | null);
    running(): boolean;
    /**
     * Sets a new goal and runs one tick so the new plan shows at once.
     */
    set_goal(x: number, y: number): string;
    state(): string;
    /**
     * Runs up to `n` ticks, stopping early when the mission ends.
     */
    step(n: number): string;
}

/**
 * Directives for `text` under the default lexicon, as a JSON array.
 */
export function parse(text: string): string;

export function scenario_names(): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_grid: (a: number) => [number, number];
    readonly demo_instruct: (a: number, b: number, c: number) => [number, number, number, number];
    readonly demo_layout: (a: number) => [number, number];
    readonly demo_new: (a: number, b: number, c: number, d: bigint) => [number, number, number];
    readonly demo_running: (a: number) => number;
    readonly demo_set_goal: (a: number, b: number, c: number) => [number, number, number, number];
    readonly demo_state: (a: number) => [number, number];
    readonly demo_step: (a: number, b: number) => [number, number];
    readonly parse: (a: number, b: number) => [number, number];
    readonly scenario_names: () => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
