/**
 * Codecs for the two binary formats the core tool reads and writes.
 *
 * MPB1 (backbone trajectory): 4-byte ASCII magic "MPB1", then a little-endian
 * header <u32 version, u32 nFrames, u32 nResidues, u8 atomCount, 7 pad bytes>
 * (24 bytes total), then nFrames*nResidues*9 float32 coordinates in frame,
 * residue, atom (N/CA/C), xyz order, then an optional trailer of nResidues
 * single-character ASCII chain ids.
 *
 * MPF1 (feature matrix): 4-byte magic "MPF1", then little-endian
 * <u32 nFrames, u32 dim, u8 kindTag> (13 bytes total), then nFrames*dim
 * float64 values, row-major.
 *
 * All multi-byte numbers are little-endian regardless of platform.
 */

export const MPB_MAGIC = "MPB1";
export const MPF_MAGIC = "MPF1";
export const MPB_VERSION = 1;

const MPB_HEADER_SIZE = 24;
const MPF_HEADER_SIZE = 13;
const ATOMS_PER_RESIDUE = 3;

export type FeatureKind =
  | "matrix"
  | "orientation"
  | "orientation_mean"
  | "orientation_axis"
  | "orientation_angle"
  | "ca"
  | "torsion"
  | "pointcloud"
  | "pointcloud_mean";

/** On-disk u8 tag for each feature kind. */
export const FEATURE_KIND_TAGS: Readonly<Record<FeatureKind, number>> = {
  matrix: 0,
  orientation: 1,
  orientation_mean: 2,
  orientation_axis: 3,
  orientation_angle: 4,
  ca: 5,
  torsion: 6,
  pointcloud: 7,
  pointcloud_mean: 8,
};

const TAG_TO_KIND = new Map<number, FeatureKind>(
  (Object.entries(FEATURE_KIND_TAGS) as Array<[FeatureKind, number]>).map(
    ([kind, tag]) => [tag, kind],
  ),
);

/** Backbone trajectory held in memory; coordinates row-major float64. */
export interface Trajectory {
  /** nFrames*nResidues*9 values: frame, residue, atom (N/CA/C), xyz. */
  coords: Float64Array;
  nFrames: number;
  nResidues: number;
  /** One ASCII character per residue; omitted means a single unnamed chain. */
  chainIds?: string;
}

/** Feature matrix held in memory; data row-major float64. */
export interface FeatureMatrix {
  /** nFrames*dim values, row-major. */
  data: Float64Array;
  nFrames: number;
  dim: number;
  kind: FeatureKind;
}

/** Raised on malformed buffers or shape mismatches at the boundary. */
export class FormatError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "FormatError";
  }
}

function checkCount(name: string, value: number): void {
  if (!Number.isInteger(value) || value < 0 || value > 0xffffffff) {
    throw new FormatError(`${name} must be a u32 count, got ${value}`);
  }
}

/** Serialize a trajectory to MPB1 bytes (coordinates narrowed to float32). */
export function encodeTrajectory(traj: Trajectory): Buffer {
  checkCount("nFrames", traj.nFrames);
  checkCount("nResidues", traj.nResidues);
  const expected = traj.nFrames * traj.nResidues * 9;
  if (traj.coords.length !== expected) {
    throw new FormatError(
      `coords has ${traj.coords.length} values; ` +
        `${traj.nFrames} frames x ${traj.nResidues} residues x 3 atoms x 3 ` +
        `needs ${expected}`,
    );
  }
  if (traj.chainIds !== undefined) {
    if (traj.chainIds.length !== traj.nResidues) {
      throw new FormatError(
        `chainIds has ${traj.chainIds.length} entries for ` +
          `${traj.nResidues} residues`,
      );
    }
    for (const ch of traj.chainIds) {
      if (ch.charCodeAt(0) > 0x7f) {
        throw new FormatError(`chain id ${JSON.stringify(ch)} is not ASCII`);
      }
    }
  }

  const trailer = traj.chainIds === undefined ? 0 : traj.nResidues;
  const buf = Buffer.alloc(MPB_HEADER_SIZE + expected * 4 + trailer);
  buf.write(MPB_MAGIC, 0, "ascii");
  buf.writeUInt32LE(MPB_VERSION, 4);
  buf.writeUInt32LE(traj.nFrames, 8);
  buf.writeUInt32LE(traj.nResidues, 12);
  buf.writeUInt8(ATOMS_PER_RESIDUE, 16);
  for (let i = 0; i < expected; i++) {
    buf.writeFloatLE(traj.coords[i], MPB_HEADER_SIZE + i * 4);
  }
  if (traj.chainIds !== undefined) {
    buf.write(traj.chainIds, MPB_HEADER_SIZE + expected * 4, "ascii");
  }
  return buf;
}

/** Parse MPB1 bytes; float32 coordinates are widened to float64. */
export function decodeTrajectory(buf: Buffer): Trajectory {
  if (buf.length < MPB_HEADER_SIZE) {
    throw new FormatError(`truncated header: ${buf.length} bytes`);
  }
  const magic = buf.toString("ascii", 0, 4);
  if (magic !== MPB_MAGIC) {
    throw new FormatError(`bad magic ${JSON.stringify(magic)}`);
  }
  const version = buf.readUInt32LE(4);
  if (version !== MPB_VERSION) {
    throw new FormatError(`unsupported version ${version}`);
  }
  const nFrames = buf.readUInt32LE(8);
  const nResidues = buf.readUInt32LE(12);
  const atomCount = buf.readUInt8(16);
  if (atomCount !== ATOMS_PER_RESIDUE) {
    throw new FormatError(`atom count ${atomCount} != ${ATOMS_PER_RESIDUE}`);
  }
  const count = nFrames * nResidues * 9;
  const payloadEnd = MPB_HEADER_SIZE + count * 4;
  if (buf.length < payloadEnd) {
    throw new FormatError(
      `payload needs ${count * 4} bytes, found ${buf.length - MPB_HEADER_SIZE}`,
    );
  }
  const coords = new Float64Array(count);
  for (let i = 0; i < count; i++) {
    coords[i] = buf.readFloatLE(MPB_HEADER_SIZE + i * 4);
  }
  const trailer = buf.length - payloadEnd;
  let chainIds: string | undefined;
  if (trailer === 0) {
    chainIds = undefined;
  } else if (trailer === nResidues) {
    chainIds = buf.toString("ascii", payloadEnd);
  } else {
    throw new FormatError(
      `${trailer} trailing bytes; expected 0 or ${nResidues} chain ids`,
    );
  }
  return { coords, nFrames, nResidues, chainIds };
}

/** Serialize a feature matrix to MPF1 bytes. */
export function encodeFeatures(fm: FeatureMatrix): Buffer {
  checkCount("nFrames", fm.nFrames);
  checkCount("dim", fm.dim);
  const tag = FEATURE_KIND_TAGS[fm.kind];
  if (tag === undefined) {
    throw new FormatError(`unknown feature kind ${JSON.stringify(fm.kind)}`);
  }
  const expected = fm.nFrames * fm.dim;
  if (fm.data.length !== expected) {
    throw new FormatError(
      `data has ${fm.data.length} values; ${fm.nFrames} frames x ${fm.dim} ` +
        `columns needs ${expected}`,
    );
  }
  const buf = Buffer.alloc(MPF_HEADER_SIZE + expected * 8);
  buf.write(MPF_MAGIC, 0, "ascii");
  buf.writeUInt32LE(fm.nFrames, 4);
  buf.writeUInt32LE(fm.dim, 8);
  buf.writeUInt8(tag, 12);
  for (let i = 0; i < expected; i++) {
    buf.writeDoubleLE(fm.data[i], MPF_HEADER_SIZE + i * 8);
  }
  return buf;
}

/** Parse MPF1 bytes. */
export function decodeFeatures(buf: Buffer): FeatureMatrix {
  if (buf.length < MPF_HEADER_SIZE) {
    throw new FormatError(`truncated header: ${buf.length} bytes`);
  }
  const magic = buf.toString("ascii", 0, 4);
  if (magic !== MPF_MAGIC) {
    throw new FormatError(`bad magic ${JSON.stringify(magic)}`);
  }
  const nFrames = buf.readUInt32LE(4);
  const dim = buf.readUInt32LE(8);
  const tag = buf.readUInt8(12);
  const kind = TAG_TO_KIND.get(tag);
  if (kind === undefined) {
    throw new FormatError(`unknown kind tag ${tag}`);
  }
  const count = nFrames * dim;
  if (buf.length < MPF_HEADER_SIZE + count * 8) {
    throw new FormatError(
      `payload needs ${count * 8} bytes, found ${buf.length - MPF_HEADER_SIZE}`,
    );
  }
  const data = new Float64Array(count);
  for (let i = 0; i < count; i++) {
    data[i] = buf.readDoubleLE(MPF_HEADER_SIZE + i * 8);
  }
  return { data, nFrames, dim, kind };
}
