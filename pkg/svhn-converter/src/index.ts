export { convertBuffer, convertFile, pixelChecksum } from "./convert";
export { readMatFile, MatFormatError } from "./mat";
export { readFtc, writeFtc, FtcFormatError } from "./ftc";
