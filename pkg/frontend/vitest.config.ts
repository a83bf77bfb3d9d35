import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["test/**/*.test.ts"],
    // loopback and example tests spawn a real controller process
    testTimeout: 30_000,
    hookTimeout: 30_000,
  },
});
