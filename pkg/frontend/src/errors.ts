/** Error taxonomy for the exporter; mirrors the engine's exit-code
 * convention (2 config, 3 data, 4 numerical). */

export class ExportError extends Error {
  readonly exitCode: number = 1;
  constructor(message: string) {
    super(message);
    this.name = new.target.name;
  }
}

export class ConfigError extends ExportError {
  override readonly exitCode = 2;
}

export class ModelLoadError extends ExportError {
  override readonly exitCode = 3;
}

export class ImageReadError extends ExportError {
  override readonly exitCode = 3;
}

export class FormatError extends ExportError {
  override readonly exitCode = 3;
}
