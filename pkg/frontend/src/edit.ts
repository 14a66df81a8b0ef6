/** Edit console state: cuboid selection, swap/blend calls, undo history.
 *
 * The viewer never mutates scenes; every edit asks the service for a new
 * snapshot id and undo simply re-activates the previous id.
 */

import type { Cuboid, SceneInfo } from "./types";

export interface EditService {
  editSwap(scene: string, a: Cuboid, b: Cuboid, k: number, seed: number): Promise<string>;
  editBlend(scenes: string[], placements: [number, number, number][]): Promise<string>;
}

export const DEFAULT_CLUSTERS = 12;

export function cuboidWithinDims(c: Cuboid, dims: [number, number, number]): boolean {
  for (let a = 0; a < 3; a++) {
    if (c.min[a] < 0 || c.max[a] < c.min[a] || c.max[a] >= dims[a]) return false;
  }
  return true;
}

export class EditController {
  private history: string[] = [];
  selection: Cuboid[] = [];
  k = DEFAULT_CLUSTERS;
  seed = 0;

  constructor(
    private service: EditService,
    private current: string,
    private onSceneChange: (id: string) => void,
  ) {}

  get currentScene(): string {
    return this.current;
  }

  get canUndo(): boolean {
    return this.history.length > 0;
  }

  selectCuboid(c: Cuboid, info: SceneInfo): void {
    if (!cuboidWithinDims(c, info.dims)) {
      throw new Error(`cuboid out of grid bounds ${info.dims}`);
    }
    if (this.selection.length >= 2) this.selection = [];
    this.selection = [...this.selection, c];
  }

  clearSelection(): void {
    this.selection = [];
  }

  private activate(id: string): void {
    this.history.push(this.current);
    this.current = id;
    this.onSceneChange(id);
  }

  async swap(): Promise<string> {
    if (this.selection.length !== 2) {
      throw new Error("select exactly two cuboids to swap");
    }
    const [a, b] = this.selection;
    const id = await this.service.editSwap(this.current, a, b, this.k, this.seed);
    this.activate(id);
    return id;
  }

  async blend(other: string, placement: [number, number, number]): Promise<string> {
    const id = await this.service.editBlend([this.current, other], [[0, 0, 0], placement]);
    this.activate(id);
    return id;
  }

  undo(): string {
    const prev = this.history.pop();
    if (prev === undefined) throw new Error("nothing to undo");
    this.current = prev;
    this.onSceneChange(prev);
    return prev;
  }
}
