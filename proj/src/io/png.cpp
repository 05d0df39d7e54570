#include "segattack/io/png.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

namespace segattack::io {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

File open(const std::filesystem::path& path, const char* mode) {
  File f(std::fopen(path.c_str(), mode));
  if (!f) fail(ErrorKind::io, "cannot open " + path.string());
  return f;
}

[[noreturn]] void on_error(png_structp png, png_const_charp msg) {
  auto* what = static_cast<std::string*>(png_get_error_ptr(png));
  if (what != nullptr) *what = msg;
  png_longjmp(png, 1);
}

void on_warning(png_structp, png_const_charp) {}

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path), file_(open(path, "rb")) {
    png_byte sig[8];
    if (std::fread(sig, 1, 8, file_.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
      fail(ErrorKind::format, path.string() + " is not a PNG file");
    }
    png_ = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message_, on_error, on_warning);
    if (png_ == nullptr) fail(ErrorKind::io, "libpng initialization failed");
    info_ = png_create_info_struct(png_);
    if (info_ == nullptr) fail(ErrorKind::io, "libpng initialization failed");
  }
  ~Reader() { png_destroy_read_struct(&png_, &info_, nullptr); }
  Reader(const Reader&) = delete;
  Reader& operator=(const Reader&) = delete;

  // Any libpng error inside these bodies longjmps back here; no C++ objects
  // with non-trivial destructors are created between setjmp and the calls.
  bool header() {
    if (setjmp(png_jmpbuf(png_))) return false;
    png_init_io(png_, file_.get());
    png_set_sig_bytes(png_, 8);
    png_read_info(png_, info_);
    return true;
  }

  bool transform(int* channels, bool* indexed) {
    if (setjmp(png_jmpbuf(png_))) return false;
    const png_byte color = png_get_color_type(png_, info_);
    const png_byte depth = png_get_bit_depth(png_, info_);
    if (depth == 16) png_set_strip_16(png_);
    if (depth < 8) png_set_packing(png_);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png_);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png_);
    if (color == PNG_COLOR_TYPE_PALETTE || color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) {
      *channels = 1;
    } else {
      *channels = 3;
    }
    *indexed = color == PNG_COLOR_TYPE_PALETTE;
    png_read_update_info(png_, info_);
    return true;
  }

  bool rows(std::vector<png_bytep>& ptrs) {
    if (setjmp(png_jmpbuf(png_))) return false;
    png_read_image(png_, ptrs.data());
    png_read_end(png_, nullptr);
    return true;
  }

  png_structp png() const { return png_; }
  png_infop info() const { return info_; }
  const std::string& message() const { return message_; }

 private:
  std::filesystem::path path_;
  File file_;
  png_structp png_ = nullptr;
  png_infop info_ = nullptr;
  std::string message_;
};

bool write_body(png_structp png, png_infop info, std::FILE* file, const Raster& raster, png_bytepp rows) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_init_io(png, file);
  png_set_IHDR(png, info, static_cast<png_uint_32>(raster.width), static_cast<png_uint_32>(raster.height), 8,
               raster.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows);
  png_write_end(png, nullptr);
  return true;
}

}  // namespace

Raster read_png(const std::filesystem::path& path) {
  Reader r(path);
  if (!r.header()) fail(ErrorKind::format, path.string() + ": " + r.message());
  Raster out;
  if (!r.transform(&out.channels, &out.indexed)) fail(ErrorKind::format, path.string() + ": " + r.message());
  out.width = static_cast<int>(png_get_image_width(r.png(), r.info()));
  out.height = static_cast<int>(png_get_image_height(r.png(), r.info()));
  const std::size_t rowbytes = png_get_rowbytes(r.png(), r.info());
  const std::size_t expect = static_cast<std::size_t>(out.width) * static_cast<std::size_t>(out.channels);
  if (rowbytes != expect) fail(ErrorKind::format, path.string() + ": unsupported PNG layout");
  out.pixels.resize(rowbytes * static_cast<std::size_t>(out.height));
  std::vector<png_bytep> ptrs(static_cast<std::size_t>(out.height));
  for (int y = 0; y < out.height; ++y) ptrs[static_cast<std::size_t>(y)] = out.pixels.data() + rowbytes * static_cast<std::size_t>(y);
  if (!r.rows(ptrs)) fail(ErrorKind::format, path.string() + ": " + r.message());
  return out;
}

std::pair<int, int> png_size(const std::filesystem::path& path) {
  Reader r(path);
  if (!r.header()) fail(ErrorKind::format, path.string() + ": " + r.message());
  return {static_cast<int>(png_get_image_width(r.png(), r.info())),
          static_cast<int>(png_get_image_height(r.png(), r.info()))};
}

void write_png(const std::filesystem::path& path, const Raster& raster) {
  if (raster.channels != 1 && raster.channels != 3) fail(ErrorKind::format, "PNG output needs 1 or 3 channels");
  if (raster.width < 1 || raster.height < 1 ||
      raster.pixels.size() != static_cast<std::size_t>(raster.width) * static_cast<std::size_t>(raster.height) *
                                  static_cast<std::size_t>(raster.channels)) {
    fail(ErrorKind::format, "raster size does not match its pixel buffer");
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  File file = open(path, "wb");
  std::string message;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, on_error, on_warning);
  if (png == nullptr) fail(ErrorKind::io, "libpng initialization failed");
  png_infop info = png_create_info_struct(png);
  std::vector<png_bytep> rows(static_cast<std::size_t>(raster.height));
  const std::size_t stride = static_cast<std::size_t>(raster.width) * static_cast<std::size_t>(raster.channels);
  for (int y = 0; y < raster.height; ++y) {
    rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(raster.pixels.data() + stride * static_cast<std::size_t>(y));
  }
  const bool ok = info != nullptr && write_body(png, info, file.get(), raster, rows.data());
  png_destroy_write_struct(&png, &info);
  if (!ok) fail(ErrorKind::io, "writing " + path.string() + " failed: " + message);
}

}  // namespace segattack::io
