#pragma once

#include <string>
#include <vector>

namespace dadet {

struct BoxAnnotation {
  int class_id;
  float x1, y1, x2, y2;  // corner format, x1 < x2 and y1 < y2
};

struct ManifestEntry {
  std::string image;  // path relative to the manifest file's directory
  std::vector<BoxAnnotation> boxes;
};

/// Dataset manifest: one JSON object per line,
///   {"image": str, "boxes": [{"class": int, "x1":.., "y1":.., "x2":.., "y2":..}]}
/// Annotation reads are counted, which lets tests prove the unlabeled-target
/// contract (the target-domain stream never dereferences a box).
class Manifest {
 public:
  Manifest() = default;

  static Manifest read(const std::string& path);
  void write(const std::string& path) const;

  void add(ManifestEntry entry);

  std::size_t size() const { return entries_.size(); }
  /// Image path resolved against the manifest's directory.
  std::string image_path(std::size_t i) const;
  const std::string& image_name(std::size_t i) const {
    return entries_[i].image;
  }
  const std::vector<BoxAnnotation>& boxes(std::size_t i) const {
    ++box_reads_;
    return entries_[i].boxes;
  }
  std::size_t box_reads() const { return box_reads_; }

  const std::string& base_dir() const { return base_dir_; }
  void set_base_dir(std::string dir) { base_dir_ = std::move(dir); }

 private:
  std::string base_dir_;
  std::vector<ManifestEntry> entries_;
  mutable std::size_t box_reads_ = 0;
};

/// Structural check used by both reader and writer: x1 < x2, y1 < y2,
/// nonnegative class. Throws IoError naming the record index.
void validate_box(const BoxAnnotation& box, std::size_t record_index);

}  // namespace dadet
