// Dataset containers on disk: the PCam HDF5 sextet and a PNG + manifest.csv
// directory layout.

#include <hdf5.h>
#include <png.h>

#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include "mdcpc/data.hpp"
#include "mdcpc/error.hpp"

namespace mdcpc {
namespace fs = std::filesystem;

std::string pcam_file_name(std::string_view split, char kind) {
  return "camelyonpatch_level_2_split_" + std::string(split) + "_" + std::string(1, kind) + ".h5";
}

namespace {

struct H5Handle {
  hid_t id = H5I_INVALID_HID;
  herr_t (*close)(hid_t) = nullptr;
  H5Handle(hid_t i, herr_t (*c)(hid_t)) : id(i), close(c) {}
  ~H5Handle() {
    if (id >= 0 && close) close(id);
  }
  H5Handle(const H5Handle&) = delete;
  H5Handle& operator=(const H5Handle&) = delete;
};

struct H5Array {
  std::vector<hsize_t> dims;
  std::vector<std::uint8_t> data;
};

// Reads dataset `name` from an HDF5 file as raw uint8.
H5Array read_h5_uint8(const fs::path& path, const char* name) {
  H5E_auto2_t old_func = nullptr;
  void* old_data = nullptr;
  H5Eget_auto2(H5E_DEFAULT, &old_func, &old_data);
  H5Eset_auto2(H5E_DEFAULT, nullptr, nullptr);
  struct Restore {
    H5E_auto2_t f;
    void* d;
    ~Restore() { H5Eset_auto2(H5E_DEFAULT, f, d); }
  } restore{old_func, old_data};

  H5Handle file(H5Fopen(path.c_str(), H5F_ACC_RDONLY, H5P_DEFAULT), H5Fclose);
  if (file.id < 0) throw IngestionError("cannot open HDF5 file " + path.string());
  H5Handle dset(H5Dopen2(file.id, name, H5P_DEFAULT), H5Dclose);
  if (dset.id < 0) {
    throw FormatError("HDF5 file " + path.string() + " has no dataset '" + name + "'");
  }
  H5Handle space(H5Dget_space(dset.id), H5Sclose);
  const int rank = H5Sget_simple_extent_ndims(space.id);
  if (rank < 1) throw FormatError("dataset '" + std::string(name) + "' in " + path.string() + " is scalar");
  H5Array out;
  out.dims.resize(static_cast<std::size_t>(rank));
  H5Sget_simple_extent_dims(space.id, out.dims.data(), nullptr);
  std::size_t count = 1;
  for (auto d : out.dims) count *= d;
  out.data.resize(count);
  if (H5Dread(dset.id, H5T_NATIVE_UINT8, H5S_ALL, H5S_ALL, H5P_DEFAULT, out.data.data()) < 0) {
    throw IngestionError("failed reading dataset '" + std::string(name) + "' from " + path.string());
  }
  return out;
}

std::vector<ImageSample> read_pcam_split(const fs::path& dir, const std::string& split) {
  const fs::path xpath = dir / pcam_file_name(split, 'x');
  const fs::path ypath = dir / pcam_file_name(split, 'y');
  H5Array x = read_h5_uint8(xpath, "x");
  H5Array y = read_h5_uint8(ypath, "y");
  if (x.dims.size() != 4 || x.dims[1] != kPcamImageSize || x.dims[2] != kPcamImageSize ||
      x.dims[3] != 3) {
    throw FormatError(xpath.string() + ": expected N x 96 x 96 x 3 uint8 images");
  }
  const std::size_t n = x.dims[0];
  if (y.data.size() != n) {
    throw FormatError(ypath.string() + ": label count " + std::to_string(y.data.size()) +
                      " does not match " + std::to_string(n) + " images");
  }
  const std::size_t stride = static_cast<std::size_t>(kPcamImageSize) * kPcamImageSize * 3;
  std::vector<ImageSample> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& s = out[i];
    s.size = kPcamImageSize;
    s.pixels.assign(x.data.begin() + static_cast<std::ptrdiff_t>(i * stride),
                    x.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * stride));
    if (y.data[i] > 1) throw FormatError(ypath.string() + ": non-binary label");
    s.label = y.data[i];
    s.id = "pcam_" + split + "_" + std::to_string(i);
  }
  return out;
}

}  // namespace

DatasetStore load_pcam(const fs::path& dir) {
  for (const char* split : {"train", "valid", "test"}) {
    for (char kind : {'x', 'y'}) {
      const fs::path p = dir / pcam_file_name(split, kind);
      if (!fs::is_regular_file(p)) throw IngestionError("PCam file missing: " + p.string());
    }
  }
  DatasetStore store;
  store.train = read_pcam_split(dir, "train");
  store.valid = read_pcam_split(dir, "valid");
  store.test = read_pcam_split(dir, "test");
  store.metadata.image_size = kPcamImageSize;
  store.metadata.class_names = {"normal", "metastatic"};
  store.metadata.source = "pcam:" + dir.string();
  return store;
}

void write_png(const fs::path& path, const ImageSample& image) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw IngestionError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IngestionError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IngestionError("libpng failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.size), static_cast<png_uint_32>(image.size),
               8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.size; ++y) {
    auto* row = const_cast<png_bytep>(image.pixels.data() + static_cast<std::size_t>(y) * image.size * 3);
    png_write_row(png, row);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

ImageSample read_png(const fs::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!fp) throw IngestionError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IngestionError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("not a readable PNG: " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const auto width = png_get_image_width(png, info);
  const auto height = png_get_image_height(png, info);
  const auto color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  if (width != height) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(path.string() + " is not square (" + std::to_string(width) + "x" +
                      std::to_string(height) + ")");
  }
  ImageSample img;
  img.size = static_cast<int>(width);
  img.pixels.resize(static_cast<std::size_t>(width) * height * 3);
  std::vector<png_bytep> rows(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = img.pixels.data() + static_cast<std::size_t>(y) * width * 3;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void export_png_dataset(const DatasetStore& store, const fs::path& dir) {
  fs::create_directories(dir / "images");
  std::ofstream manifest(dir / "manifest.csv");
  if (!manifest) throw IngestionError("cannot write manifest in " + dir.string());
  manifest << "id,split,label\n";
  for (const char* split : {"train", "valid", "test"}) {
    for (const auto& s : store.split(split)) {
      write_png(dir / "images" / (s.id + ".png"), s);
      manifest << s.id << ',' << split << ',' << (s.label ? std::to_string(*s.label) : "") << '\n';
    }
  }
  std::ofstream meta(dir / "classes.txt");
  for (const auto& c : store.metadata.class_names) meta << c << '\n';
}

DatasetStore import_png_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.csv";
  std::ifstream manifest(manifest_path);
  if (!manifest) throw IngestionError("dataset manifest missing: " + manifest_path.string());
  std::string line;
  std::getline(manifest, line);
  if (line.rfind("id,split,label", 0) != 0) {
    throw FormatError(manifest_path.string() + ": header must be id,split,label");
  }
  DatasetStore store;
  int line_no = 1;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id, split, label;
    std::getline(ss, id, ',');
    std::getline(ss, split, ',');
    std::getline(ss, label, ',');
    if (id.empty() || split.empty()) {
      throw FormatError(manifest_path.string() + ":" + std::to_string(line_no) + ": malformed row");
    }
    ImageSample img = read_png(dir / "images" / (id + ".png"));
    img.id = id;
    if (!label.empty()) img.label = std::stoi(label);
    if (store.metadata.image_size == 0) store.metadata.image_size = img.size;
    if (img.size != store.metadata.image_size) throw FormatError("mixed image sizes in " + dir.string());
    store.split(split).push_back(std::move(img));
  }
  std::ifstream classes(dir / "classes.txt");
  while (classes && std::getline(classes, line)) {
    if (!line.empty()) store.metadata.class_names.push_back(line);
  }
  store.metadata.source = "png:" + dir.string();
  store.validate();
  return store;
}

DatasetStore load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IngestionError("dataset directory not found: " + dir.string());
  if (fs::exists(dir / "manifest.csv")) return import_png_dataset(dir);
  return load_pcam(dir);
}

}  // namespace mdcpc
