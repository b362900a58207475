#!/usr/bin/env node
// Rebuild MNIST IDX files from the `mnist` npm package.
//
// The package ships 10320 MNIST digits (1032 per class) as flat float arrays
// in [0,1], quantized to three decimals from the original bytes, so the byte
// values recover exactly with round(v * 255).
//
// Usage: node mnist_from_npm.js <path-to-node_modules/mnist> <out-dir>
//
// Writes the standard four files (train-images-idx3-ubyte, train-labels-idx1-ubyte,
// t10k-images-idx3-ubyte, t10k-labels-idx1-ubyte). The last 100 samples of each
// class form a balanced test set; everything else goes to training.

'use strict';

const fs = require('fs');
const path = require('path');

const TEST_PER_CLASS = 100;
const ROWS = 28;
const COLS = 28;
const PIXELS = ROWS * COLS;

function usage() {
  console.error('usage: node mnist_from_npm.js <path-to-node_modules/mnist> <out-dir>');
  process.exit(2);
}

function imageBytes(raw, index) {
  const out = Buffer.alloc(PIXELS);
  const base = index * PIXELS;
  for (let i = 0; i < PIXELS; i++) {
    out[i] = Math.round(raw[base + i] * 255);
  }
  return out;
}

function idxImages(images) {
  const header = Buffer.alloc(16);
  header.writeUInt32BE(0x00000803, 0);
  header.writeUInt32BE(images.length, 4);
  header.writeUInt32BE(ROWS, 8);
  header.writeUInt32BE(COLS, 12);
  return Buffer.concat([header, ...images]);
}

function idxLabels(labels) {
  const header = Buffer.alloc(8);
  header.writeUInt32BE(0x00000801, 0);
  header.writeUInt32BE(labels.length, 4);
  return Buffer.concat([header, Buffer.from(labels)]);
}

function main() {
  if (process.argv.length !== 4) usage();
  const mnist = require(path.resolve(process.argv[2]));
  const outDir = process.argv[3];
  fs.mkdirSync(outDir, { recursive: true });

  const trainCounts = [];
  for (let d = 0; d < 10; d++) {
    const have = mnist[d].raw.length / PIXELS;
    if (have < TEST_PER_CLASS + 1) {
      console.error(`digit ${d}: only ${have} samples, need more than ${TEST_PER_CLASS}`);
      process.exit(1);
    }
    trainCounts.push(have - TEST_PER_CLASS);
  }

  // Interleave classes round-robin so any prefix of the file stays roughly balanced.
  const trainImages = [];
  const trainLabels = [];
  for (let i = 0; i < Math.max(...trainCounts); i++) {
    for (let d = 0; d < 10; d++) {
      if (i < trainCounts[d]) {
        trainImages.push(imageBytes(mnist[d].raw, i));
        trainLabels.push(d);
      }
    }
  }
  const testImages = [];
  const testLabels = [];
  for (let i = 0; i < TEST_PER_CLASS; i++) {
    for (let d = 0; d < 10; d++) {
      testImages.push(imageBytes(mnist[d].raw, trainCounts[d] + i));
      testLabels.push(d);
    }
  }

  fs.writeFileSync(path.join(outDir, 'train-images-idx3-ubyte'), idxImages(trainImages));
  fs.writeFileSync(path.join(outDir, 'train-labels-idx1-ubyte'), idxLabels(trainLabels));
  fs.writeFileSync(path.join(outDir, 't10k-images-idx3-ubyte'), idxImages(testImages));
  fs.writeFileSync(path.join(outDir, 't10k-labels-idx1-ubyte'), idxLabels(testLabels));
  console.log(`wrote ${trainImages.length} train / ${testImages.length} test images to ${outDir}`);
}

main();
