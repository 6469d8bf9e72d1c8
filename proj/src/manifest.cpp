#include "dadet/manifest.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "dadet/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace dadet {

void validate_box(const BoxAnnotation& box, std::size_t record_index) {
  if (box.class_id < 0)
    throw IoError("manifest: negative class id in box " +
                  std::to_string(record_index));
  if (!(box.x1 < box.x2) || !(box.y1 < box.y2))
    throw IoError("manifest: degenerate box " + std::to_string(record_index) +
                  " (requires x1 < x2 and y1 < y2)");
}

Manifest Manifest::read(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path);
  Manifest m;
  m.base_dir_ = fs::path(path).parent_path().string();

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError("manifest " + path + " line " + std::to_string(line_no) +
                    ": malformed JSON (" + e.what() + ")");
    }
    try {
      ManifestEntry entry;
      entry.image = rec.at("image").get<std::string>();
      std::size_t box_idx = 0;
      for (const auto& b : rec.at("boxes")) {
        BoxAnnotation box;
        box.class_id = b.at("class").get<int>();
        box.x1 = b.at("x1").get<float>();
        box.y1 = b.at("y1").get<float>();
        box.x2 = b.at("x2").get<float>();
        box.y2 = b.at("y2").get<float>();
        validate_box(box, box_idx++);
        entry.boxes.push_back(box);
      }
      m.entries_.push_back(std::move(entry));
    } catch (const json::exception& e) {
      throw IoError("manifest " + path + " line " + std::to_string(line_no) +
                    ": bad record (" + e.what() + ")");
    } catch (const IoError& e) {
      throw IoError("manifest " + path + " line " + std::to_string(line_no) +
                    ": " + e.what());
    }
  }
  return m;
}

void Manifest::write(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open manifest for writing: " + path);
  for (const auto& entry : entries_) {
    json boxes = json::array();
    std::size_t box_idx = 0;
    for (const auto& b : entry.boxes) {
      validate_box(b, box_idx++);
      boxes.push_back({{"class", b.class_id},
                       {"x1", b.x1},
                       {"y1", b.y1},
                       {"x2", b.x2},
                       {"y2", b.y2}});
    }
    json rec = {{"image", entry.image}, {"boxes", boxes}};
    out << rec.dump() << "\n";
  }
  if (!out) throw IoError("failed writing manifest: " + path);
}

void Manifest::add(ManifestEntry entry) {
  entries_.push_back(std::move(entry));
}

std::string Manifest::image_path(std::size_t i) const {
  const fs::path p(entries_[i].image);
  if (p.is_absolute() || base_dir_.empty()) return p.string();
  return (fs::path(base_dir_) / p).string();
}

}  // namespace dadet
