// Stable color per signer key locator, so every session renders the same
// provenance the same way.

export function colorFor(keyLocator: string): string {
  let hash = 0x811c9dc5;
  for (let i = 0; i < keyLocator.length; i++) {
    hash ^= keyLocator.charCodeAt(i);
    hash = Math.imul(hash, 0x01000193) >>> 0;
  }
  const hue = hash % 360;
  return `hsl(${hue}, 65%, 42%)`;
}
