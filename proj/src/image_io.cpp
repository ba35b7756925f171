#include "affclip/image_io.hpp"

#include "affclip/errors.hpp"
#include "affclip/resample.hpp"
#include "affclip/tensor_file.hpp"

#include <png.h>
// jpeglib.h needs size_t/FILE declared first.
#include <cstdio>
#include <jpeglib.h>

#include <cstring>
#include <fstream>

namespace affclip {
namespace {

struct CodecError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// libpng/libjpeg require their error hooks not to return; unwinding through
// the C frames is fine on the targets we build for (unwind tables present).
[[noreturn]] void png_fail(png_structp, png_const_charp msg) { throw CodecError(msg); }
void png_warn(png_structp, png_const_charp) {}

struct ReadCursor {
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;
};

void png_read_mem(png_structp png, png_bytep out, png_size_t n) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->pos + n > cur->bytes.size()) png_error(png, "truncated PNG stream");
  std::memcpy(out, cur->bytes.data() + cur->pos, n);
  cur->pos += n;
}

void png_write_mem(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<Bytes*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + n);
}
void png_flush_mem(png_structp) {}

struct DecodedPng {
  Index height = 0, width = 0, channels = 0;
  int bit_depth = 8;
  std::vector<std::uint16_t> samples;  // row-major, interleaved
};

DecodedPng decode_png(std::span<const std::uint8_t> bytes) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  if (png == nullptr) throw CodecError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_read_struct(p, i, nullptr); }
  } guard{&png, &info};

  ReadCursor cursor{bytes, 0};
  png_set_read_fn(png, &cursor, png_read_mem);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (depth == 16) png_set_swap(png);
  png_set_interlace_handling(png);
  png_read_update_info(png, info);

  DecodedPng out;
  out.width = png_get_image_width(png, info);
  out.height = png_get_image_height(png, info);
  out.channels = png_get_channels(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  std::vector<png_byte> raw(rowbytes * static_cast<std::size_t>(out.height));
  std::vector<png_bytep> rows(static_cast<std::size_t>(out.height));
  for (Index y = 0; y < out.height; ++y) rows[static_cast<std::size_t>(y)] = raw.data() + rowbytes * static_cast<std::size_t>(y);
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);

  const std::size_t n = static_cast<std::size_t>(out.height * out.width * out.channels);
  out.samples.resize(n);
  if (out.bit_depth == 16) {
    for (std::size_t y = 0; y < static_cast<std::size_t>(out.height); ++y)
      std::memcpy(out.samples.data() + y * static_cast<std::size_t>(out.width * out.channels), rows[y],
                  static_cast<std::size_t>(out.width * out.channels) * 2);
  } else {
    for (std::size_t y = 0; y < static_cast<std::size_t>(out.height); ++y)
      for (std::size_t k = 0; k < static_cast<std::size_t>(out.width * out.channels); ++k)
        out.samples[y * static_cast<std::size_t>(out.width * out.channels) + k] = rows[y][k];
  }
  return out;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
};

[[noreturn]] void jpeg_fail(j_common_ptr cinfo) {
  char msg[JMSG_LENGTH_MAX];
  (*cinfo->err->format_message)(cinfo, msg);
  throw CodecError(msg);
}

Image decode_jpeg(std::span<const std::uint8_t> bytes) {
  jpeg_decompress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_fail;
  jpeg_create_decompress(&cinfo);
  struct Guard {
    jpeg_decompress_struct* c;
    ~Guard() { jpeg_destroy_decompress(c); }
  } guard{&cinfo};
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  Image img(cinfo.output_height, cinfo.output_width);
  std::vector<JSAMPLE> row(static_cast<std::size_t>(cinfo.output_width) * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    const Index y = cinfo.output_scanline;
    JSAMPROW ptr = row.data();
    jpeg_read_scanlines(&cinfo, &ptr, 1);
    for (Index x = 0; x < img.width; ++x)
      for (Index c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(row[static_cast<std::size_t>(x * 3 + c)]) / 255.0f;
  }
  jpeg_finish_decompress(&cinfo);
  return img;
}

bool is_png(std::span<const std::uint8_t> b) {
  static constexpr std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  return b.size() >= 8 && std::memcmp(b.data(), sig, 8) == 0;
}
bool is_jpeg(std::span<const std::uint8_t> b) { return b.size() >= 3 && b[0] == 0xFF && b[1] == 0xD8 && b[2] == 0xFF; }

Bytes encode_png(Index height, Index width, int color_type, int bit_depth, const std::vector<png_bytep>& rows) {
  Bytes out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  if (png == nullptr) throw CodecError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_write_struct(p, i); }
  } guard{&png, &info};
  png_set_write_fn(png, &out, png_write_mem, png_flush_mem);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16) png_set_swap(png);
  png_write_image(png, const_cast<png_bytepp>(rows.data()));
  png_write_end(png, nullptr);
  return out;
}

}  // namespace

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open file");
  return Bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(path.string(), "write failed");
}

Image decode_image(std::span<const std::uint8_t> bytes, const std::string& origin) {
  try {
    if (is_jpeg(bytes)) return decode_jpeg(bytes);
    if (!is_png(bytes)) throw InvalidInput(origin + ": not a PNG or JPEG image");
    const DecodedPng png = decode_png(bytes);
    Image img(png.height, png.width);
    const double scale = png.bit_depth == 16 ? 65535.0 : 255.0;
    const Index ch = png.channels;
    for (Index p = 0; p < png.height * png.width; ++p) {
      const std::uint16_t* s = png.samples.data() + p * ch;
      for (Index c = 0; c < 3; ++c) {
        const std::uint16_t v = ch >= 3 ? s[c] : s[0];
        img.rgb(p, c) = static_cast<float>(v / scale);
      }
    }
    return img;
  } catch (const CodecError& e) {
    throw InvalidInput(origin + ": undecodable image (" + e.what() + ")");
  }
}

Image read_image(const std::filesystem::path& path) { return decode_image(read_file(path), path.string()); }

GrayRaster read_gray(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".safetensors" || ext == ".tensors") {
    const TensorFile file = TensorFile::read(path);
    const StoredTensor& t = file.at("heatmap");
    if (t.shape.size() != 2) throw InvalidInput(path.string() + ": heatmap tensor must be 2-D");
    GrayRaster r;
    r.bit_depth = 32;
    r.values = t.matrix().cast<double>().array();
    return r;
  }
  const Bytes bytes = read_file(path);
  if (!is_png(bytes)) throw InvalidInput(path.string() + ": grayscale rasters must be PNG");
  DecodedPng png;
  try {
    png = decode_png(bytes);
  } catch (const CodecError& e) {
    throw InvalidInput(path.string() + ": undecodable PNG (" + e.what() + ")");
  }
  GrayRaster r;
  r.bit_depth = png.bit_depth;
  r.values.resize(png.height, png.width);
  const Index ch = png.channels;
  const Index colour = ch >= 3 ? 3 : 1;
  for (Index y = 0; y < png.height; ++y) {
    for (Index x = 0; x < png.width; ++x) {
      const std::uint16_t* s = png.samples.data() + (y * png.width + x) * ch;
      for (Index c = 1; c < colour; ++c)
        if (s[c] != s[0]) throw InvalidInput(path.string() + ": expected a grayscale image");
      r.values(y, x) = s[0];
    }
  }
  return r;
}

Bytes encode_png_rgb8(const Image& image) {
  std::vector<png_byte> raw(static_cast<std::size_t>(image.height * image.width * 3));
  for (Index p = 0; p < image.height * image.width; ++p)
    for (Index c = 0; c < 3; ++c) {
      const float v = std::clamp(image.rgb(p, c), 0.0f, 1.0f);
      raw[static_cast<std::size_t>(p * 3 + c)] = static_cast<png_byte>(std::lround(v * 255.0f));
    }
  std::vector<png_bytep> rows(static_cast<std::size_t>(image.height));
  for (Index y = 0; y < image.height; ++y) rows[static_cast<std::size_t>(y)] = raw.data() + y * image.width * 3;
  return encode_png(image.height, image.width, PNG_COLOR_TYPE_RGB, 8, rows);
}

Bytes encode_png_gray8(const Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>& levels) {
  const Index h = levels.rows(), w = levels.cols();
  std::vector<png_byte> raw(static_cast<std::size_t>(h * w));
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) raw[static_cast<std::size_t>(y * w + x)] = levels(y, x);
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (Index y = 0; y < h; ++y) rows[static_cast<std::size_t>(y)] = raw.data() + y * w;
  return encode_png(h, w, PNG_COLOR_TYPE_GRAY, 8, rows);
}

Bytes encode_png_gray16(const Eigen::Array<std::uint16_t, Eigen::Dynamic, Eigen::Dynamic>& levels) {
  const Index h = levels.rows(), w = levels.cols();
  std::vector<std::uint16_t> raw(static_cast<std::size_t>(h * w));
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) raw[static_cast<std::size_t>(y * w + x)] = levels(y, x);
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (Index y = 0; y < h; ++y) rows[static_cast<std::size_t>(y)] = reinterpret_cast<png_bytep>(raw.data() + y * w);
  return encode_png(h, w, PNG_COLOR_TYPE_GRAY, 16, rows);
}

Eigen::Array<std::uint16_t, Eigen::Dynamic, Eigen::Dynamic> decode_png_gray16(std::span<const std::uint8_t> bytes) {
  if (!is_png(bytes)) throw InvalidInput("not a PNG stream");
  DecodedPng png;
  try {
    png = decode_png(bytes);
  } catch (const CodecError& e) {
    throw InvalidInput(std::string("undecodable PNG: ") + e.what());
  }
  if (png.channels != 1 || png.bit_depth != 16) throw InvalidInput("expected a 16-bit grayscale PNG");
  Eigen::Array<std::uint16_t, Eigen::Dynamic, Eigen::Dynamic> out(png.height, png.width);
  for (Index y = 0; y < png.height; ++y)
    for (Index x = 0; x < png.width; ++x) out(y, x) = png.samples[static_cast<std::size_t>(y * png.width + x)];
  return out;
}

Image resize_image(const Image& image, Index height, Index width) {
  if (image.height == height && image.width == width) return image;
  FeatureBatch<float> fb;
  fb.batch = 1;
  fb.height = image.height;
  fb.width = image.width;
  fb.data = image.rgb;
  const FeatureBatch<float> r = resize(fb, height, width, Interpolation::Bilinear);
  Image out;
  out.height = height;
  out.width = width;
  out.rgb = r.data;
  return out;
}

}  // namespace affclip
