// Emits fuzzed UI requests as JSON for server-side acceptance checks.
// Usage: node dist/fuzzMain.js <count> [seed]   (writes JSON to stdout)
import { fuzzRequests } from './fuzz.js';

const count = parseInt(process.argv[2] ?? '1000', 10);
const seed = parseInt(process.argv[3] ?? '0', 10);
process.stdout.write(JSON.stringify(fuzzRequests(count, seed)));
