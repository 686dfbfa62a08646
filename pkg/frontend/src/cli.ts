/**
 * convert  --source <model.json | seeded:alexnet[:seed]>  --out <dir>
 *
 * Writes the first five conv layers of a tfjs layers model as a grasptrace
 * weight bank (manifest.txt + one .bin per conv). With --probe it also runs
 * the source model on a seeded image and records per-tap checksums and spot
 * values, so the consuming side can prove it computes the same numbers.
 */

import * as tf from '@tensorflow/tfjs';
import yargs from 'yargs';
import { hideBin } from 'yargs/helpers';
import { ALEXNET_INPUT, seededAlexnet } from './alexnet';
import { extractStack } from './extract';
import { loadModelFile } from './io';
import { buildProbe, checkProbeDir, makeProbeImage, writeProbe } from './probe';
import { ConversionError, writeStack } from './stack';

const EXIT_CONVERSION = 2;

async function resolveSource(source: string): Promise<tf.LayersModel> {
  if (source.startsWith('seeded:alexnet')) {
    const rest = source.slice('seeded:alexnet'.length);
    if (rest === '') return seededAlexnet();
    if (rest.startsWith(':')) {
      const seed = Number(rest.slice(1));
      if (!Number.isInteger(seed)) {
        throw new ConversionError(`bad seed in source '${source}'`);
      }
      return seededAlexnet(seed);
    }
    throw new ConversionError(`unknown builtin source '${source}'`);
  }
  return loadModelFile(source);
}

interface ConvertArgs {
  source: string;
  out: string;
  probe: boolean;
  seed: number;
  preprocess: (string | number)[];
}

async function runConvert(argv: ConvertArgs): Promise<void> {
  const model = await resolveSource(argv.source);
  const preprocess = argv.preprocess.map(String);
  const extraction = extractStack(model, preprocess);
  writeStack(argv.out, extraction.stack);
  for (const note of extraction.notes) console.log(`  ${note}`);
  const convs = extraction.stack.layers.filter((l) => l.kind === 'conv').length;
  const pools = extraction.stack.layers.length - convs;
  console.log(`wrote ${convs} conv + ${pools} pool layers to ${argv.out}`);

  if (argv.probe) {
    const shape = model.inputs[0].shape; // [batch, h, w, c]
    const height = (shape[1] as number | null) ?? ALEXNET_INPUT;
    const width = (shape[2] as number | null) ?? ALEXNET_INPUT;
    const channels = extraction.stack.inputChannels;
    const image = makeProbeImage(argv.seed, channels, height, width);
    const fixture = buildProbe(model, extraction, image, channels, height, width, argv.seed);
    writeProbe(argv.out, fixture, image);
    // Re-read everything from disk and recompute with the rewritten stack;
    // catches packaging bugs while the source model is still at hand.
    const check = checkProbeDir(argv.out, 1e-4);
    console.log(
      `probe written (${Object.keys(fixture.taps).length} taps, seed ${argv.seed}); ` +
      `self-check worst sample ${check.worstSample.toExponential(2)}, ` +
      `worst checksum rel ${check.worstChecksumRel.toExponential(2)}`);
  }
}

export async function main(args: string[]): Promise<number> {
  try {
    await yargs(args)
      .command<ConvertArgs>(
        'convert', 'rewrite a tfjs layers model as a grasptrace weight bank',
        (y) => y
          .option('source', {
            type: 'string', demandOption: true,
            describe: "path to a model.json, or 'seeded:alexnet[:seed]'",
          })
          .option('out', { type: 'string', demandOption: true, describe: 'output directory' })
          .option('probe', { type: 'boolean', default: false, describe: 'also write a probe fixture' })
          .option('seed', { type: 'number', default: 7, describe: 'probe image seed' })
          .option('preprocess', {
            type: 'array', default: ['rgb unit-range'],
            describe: 'preprocessing notes recorded in the manifest',
          }),
        (argv) => runConvert(argv as unknown as ConvertArgs),
      )
      .demandCommand(1)
      .strict()
      .fail((msg, err) => { throw err ?? new ConversionError(msg); })
      .parseAsync();
    return 0;
  } catch (err) {
    if (err instanceof ConversionError) {
      console.error(`error: ${err.message}`);
      return EXIT_CONVERSION;
    }
    throw err;
  }
}

if (require.main === module) {
  main(hideBin(process.argv)).then((code) => { process.exitCode = code; });
}
