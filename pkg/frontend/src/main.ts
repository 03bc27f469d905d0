// Browser entry point: glue between the DOM and the controller.

import { backend } from './api.js';
import { App, type AppState } from './app.js';
import { mapKey } from './keyboard.js';
import { ledgerView } from './state.js';
import {
  renderBanner,
  renderClassOptions,
  renderHelp,
  renderLedger,
  renderPager,
  renderPicker,
  renderQueue,
} from './ui.js';

function byId(id: string): HTMLElement {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing #${id}`);
  return el;
}

const bannerEl = byId('banner');
const queueEl = byId('queue');
const pagerEl = byId('pager');
const ledgerEl = byId('ledger');
const pickerEl = byId('picker');
const classFilterEl = byId('class-filter') as HTMLSelectElement;
const sortEl = byId('sort') as HTMLSelectElement;
const iterationEl = byId('iteration') as HTMLInputElement;

byId('help').innerHTML = renderHelp();

let knownClassCount = -1;

function render(state: AppState): void {
  bannerEl.innerHTML = renderBanner(state);
  queueEl.innerHTML = renderQueue(state);
  pagerEl.innerHTML = renderPager(state.queue);
  ledgerEl.innerHTML = renderLedger(ledgerView(state.ledger, state.classes?.classes ?? []));
  pickerEl.innerHTML = renderPicker(state);
  const count = state.classes?.classes.length ?? 0;
  if (count !== knownClassCount) {
    // repopulating on every render would fight the user's open dropdown
    classFilterEl.innerHTML = renderClassOptions(state.classes, state.query.classId);
    knownClassCount = count;
  }
  queueEl.querySelector('.card.selected')?.scrollIntoView({ block: 'nearest' });
}

const app = new App(backend, render);

document.addEventListener('keydown', (event) => {
  const tag = event.target instanceof HTMLElement ? event.target.tagName : '';
  const typing = tag === 'INPUT' || tag === 'SELECT' || tag === 'TEXTAREA';
  const action = mapKey(event.key, { typing, picking: app.state.picking });
  if (!action) return;
  event.preventDefault();
  void app.handleKey(action);
});

queueEl.addEventListener('click', (event) => {
  const card = (event.target as HTMLElement).closest('.card');
  const key = card?.getAttribute('data-key');
  if (key) app.selectKey(key);
});

pagerEl.addEventListener('click', (event) => {
  const button = (event.target as HTMLElement).closest('button[data-page]');
  const delta = button?.getAttribute('data-page');
  if (delta) void app.page(Number(delta));
});

pickerEl.addEventListener('click', (event) => {
  const row = (event.target as HTMLElement).closest('li[data-class-id]');
  if (row) {
    void app.pickClass(Number(row.getAttribute('data-class-id')));
  } else if ((event.target as HTMLElement).classList.contains('picker-backdrop')) {
    app.cancelRelabel();
  }
});

classFilterEl.addEventListener('change', () => {
  const value = classFilterEl.value;
  void app.setQuery({ classId: value === '' ? undefined : Number(value) });
});

sortEl.addEventListener('change', () => {
  void app.setQuery({ sort: sortEl.value === 'ref' ? 'ref' : 'confidence' });
});

iterationEl.addEventListener('change', () => {
  const value = iterationEl.value.trim();
  void app.setQuery({ iteration: value === '' ? undefined : Number(value) });
});

byId('reload').addEventListener('click', () => {
  void app.load();
});

void app.load();
