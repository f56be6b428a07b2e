import { defineConfig } from "vitest/config";

// source files import each other with .js suffixes so the emitted modules
// run natively in the browser; map those back to the .ts sources here
export default defineConfig({
  resolve: {
    alias: [{ find: /^(\.{1,2}\/.*)\.js$/, replacement: "$1" }],
  },
  test: { environment: "node", include: ["tests/**/*.test.ts"] },
});
