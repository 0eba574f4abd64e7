import { defineConfig } from "vitest/config";

// Parity tests spawn the core CLI several times per test case.
export default defineConfig({
  test: {
    testTimeout: 120_000,
  },
});
