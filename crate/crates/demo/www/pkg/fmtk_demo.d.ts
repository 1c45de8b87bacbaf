/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * One random augmentation of the degraded phantom, plus a text summary
     * of the sampled ops via [`Demo::describe_augment`].
     */
    augment(seed: bigint): Uint8Array;
    /**
     * Applies the three defects and returns the degraded phantom.
     */
    degrade(illumination: number, clarity: number, contrast: number, seed: bigint): Uint8Array;
    describe_augment(seed: bigint): string;
    /**
     * GradCAM for `target` (`class:<c>` or `detail:<j>`) blended over the
     * degraded phantom.
     */
    gradcam(target: string, alpha: number): Uint8Array;
    /**
     * Oracle labels of the current severities as `[illum, clarity, contrast, overall]`.
     */
    labels(): Uint8Array;
    /**
     * Loads a checkpoint written by `fmtk` (for example `finetune_best.fmtk`).
     */
    load_checkpoint(bytes: Uint8Array): void;
    model_loaded(): boolean;
    /**
     * Starts with a clean phantom and a randomly initialized 3-class model with a detail head.
     */
    constructor(size: number, seed: bigint);
    /**
     * Overall-class probabilities followed by the three detail
     * probabilities (detail entries are absent for a single-task model).
     */
    predict(): Float64Array;
    /**
     * Replaces the phantom anatomy and keeps the current severities.
     */
    reseed(seed: bigint): void;
    size(): number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_augment: (a: number, b: bigint) => [number, number];
    readonly demo_degrade: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number, number];
    readonly demo_describe_augment: (a: number, b: bigint) => [number, number];
    readonly demo_gradcam: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly demo_labels: (a: number) => [number, number];
    readonly demo_load_checkpoint: (a: number, b: number, c: number) => [number, number];
    readonly demo_model_loaded: (a: number) => number;
    readonly demo_new: (a: number, b: bigint) => [number, number, number];
    readonly demo_predict: (a: number) => [number, number, number, number];
    readonly demo_reseed: (a: number, b: bigint) => [number, number];
    readonly demo_size: (a: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
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
