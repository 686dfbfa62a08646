import { defineConfig } from 'vitest/config';

export default defineConfig({
  test: {
    include: ['test/**/*.test.ts'],
    // The cross-runtime test shells out to the python package, which has to
    // import numpy/scipy and run a forward pass; give it room.
    testTimeout: 120_000,
    hookTimeout: 120_000,
  },
});
