#include <png.h>

#include <algorithm>
#include <cctype>
#include <map>
#include <sstream>

#include "flowcodec/errors.hpp"
#include "flowcodec/video_io.hpp"

namespace flowcodec {

Frame read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw IoError(path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&image);
    throw DecodeError(path.string() + ": " + image.message);
  }
  const int64_t h = image.height, w = image.width;
  auto hwc = torch::from_blob(buffer.data(), {h, w, 3}, torch::kUInt8);
  return Frame(hwc.permute({2, 0, 1}).to(torch::kFloat32).div(255.0f).contiguous());
}

void write_png(const Frame& frame, const std::filesystem::path& path) {
  auto hwc = frame.pixels().mul(255.0f).round().clamp(0, 255).to(torch::kUInt8)
                 .permute({1, 2, 0}).contiguous();
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(frame.width());
  image.height = static_cast<png_uint_32>(frame.height());
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, hwc.data_ptr<uint8_t>(), 0, nullptr)) {
    throw IoError(path.string() + ": " + image.message);
  }
}

namespace {

// Trailing decimal digits of the file stem, e.g. "frame_0007" -> 7.
std::optional<long> trailing_index(const std::string& stem) {
  size_t pos = stem.size();
  while (pos > 0 && std::isdigit(static_cast<unsigned char>(stem[pos - 1]))) --pos;
  if (pos == stem.size()) return std::nullopt;
  return std::stol(stem.substr(pos));
}

}  // namespace

RawVideo read_png_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError(dir.string() + " is not a directory");
  std::map<long, std::filesystem::path> indexed;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext != ".png") continue;
    const auto index = trailing_index(entry.path().stem().string());
    if (!index) throw DecodeError(entry.path().string() + ": file name carries no frame index");
    if (!indexed.emplace(*index, entry.path()).second) {
      throw DecodeError(dir.string() + ": duplicate frame index " + std::to_string(*index));
    }
  }
  if (indexed.empty()) throw DecodeError(dir.string() + ": no PNG frames found");

  const long first = indexed.begin()->first, last = indexed.rbegin()->first;
  std::vector<long> missing;
  for (long i = first; i <= last; ++i)
    if (!indexed.count(i)) missing.push_back(i);
  if (!missing.empty()) {
    std::ostringstream msg;
    msg << dir.string() << ": missing frame index";
    for (size_t i = 0; i < missing.size() && i < 16; ++i) msg << (i ? ", " : " ") << missing[i];
    if (missing.size() > 16) msg << ", ...";
    throw DecodeError(msg.str());
  }

  RawVideo video;
  for (const auto& [index, path] : indexed) video.frames.push_back(read_png(path));
  video.validate();
  return video;
}

void write_png_dir(const RawVideo& video, const std::filesystem::path& dir) {
  video.validate();
  std::filesystem::create_directories(dir);
  for (size_t i = 0; i < video.frames.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "%05zu.png", i);
    write_png(video.frames[i], dir / name);
  }
}

}  // namespace flowcodec
