// Pure keypress to action mapping; the DOM listener lives in main.ts.

export type KeyAction =
  | { kind: 'move'; delta: number }
  | { kind: 'page'; delta: number }
  | { kind: 'confirm' }
  | { kind: 'reject' }
  | { kind: 'startRelabel' }
  | { kind: 'digit'; digit: string }
  | { kind: 'commitRelabel' }
  | { kind: 'cancel' };

export interface KeyContext {
  /** focus is in an input or textarea; never steal those keys */
  typing: boolean;
  /** the relabel class picker is open, so digits build a class id */
  picking: boolean;
}

export function mapKey(key: string, ctx: KeyContext): KeyAction | null {
  if (ctx.typing) return null;

  if (ctx.picking) {
    if (key >= '0' && key <= '9') return { kind: 'digit', digit: key };
    if (key === 'Enter') return { kind: 'commitRelabel' };
    if (key === 'Escape') return { kind: 'cancel' };
    return null;
  }

  switch (key) {
    case 'ArrowRight':
    case 'j':
      return { kind: 'move', delta: 1 };
    case 'ArrowLeft':
    case 'k':
      return { kind: 'move', delta: -1 };
    case 'n':
    case ']':
      return { kind: 'page', delta: 1 };
    case 'p':
    case '[':
      return { kind: 'page', delta: -1 };
    case 'Enter':
    case 'c':
      return { kind: 'confirm' };
    case 'Backspace':
    case 'x':
      return { kind: 'reject' };
    case 'r':
      return { kind: 'startRelabel' };
    case 'Escape':
      return { kind: 'cancel' };
    default:
      return null;
  }
}
