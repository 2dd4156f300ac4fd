import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "node",
    include: ["tests/**/*.test.ts"],
    testTimeout: 15_000,
    hookTimeout: 180_000,
    // the orbit suite spawns one Python render service; run files serially
    fileParallelism: false,
  },
});
