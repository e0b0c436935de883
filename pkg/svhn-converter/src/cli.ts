#!/usr/bin/env node
/** convert_svhn <in.mat> <out.ftc>: exit 0 on success, 1 on any error. */

import { convertFile } from "./convert";

export function run(argv: string[]): number {
  if (argv.length !== 2) {
    console.error("usage: convert_svhn <in.mat> <out.ftc>");
    return 1;
  }
  const [matPath, outPath] = argv;
  try {
    const summary = convertFile(matPath, outPath);
    console.log(`converted ${summary.count} images`);
    console.log(`pixel checksum: ${summary.checksum}`);
    return 0;
  } catch (err) {
    const e = err as Error;
    console.error(`error: ${e.constructor.name}: ${e.message}`);
    return 1;
  }
}

if (require.main === module) {
  process.exit(run(process.argv.slice(2)));
}
