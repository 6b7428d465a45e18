import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    // the live-server suite spawns a python process and renders real frames
    testTimeout: 120_000,
    hookTimeout: 120_000,
  },
});
