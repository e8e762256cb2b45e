// Line-delimited JSON for loss curves and evaluation reports, plus the
// confusion heat map.
#pragma once

#include <cmath>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "sorec/errors.hpp"
#include "sorec/image_io.hpp"
#include "sorec/train_eval.hpp"

namespace sorec {

inline nlohmann::json to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_loss", r.val_loss}, {"lr", r.lr}};
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json per = nlohmann::json::array();
  for (double a : r.per_class_accuracy) per.push_back(std::isnan(a) ? nlohmann::json(nullptr) : nlohmann::json(a));
  return {{"name", r.name},           {"total", r.total}, {"accuracy", r.accuracy},
          {"per_class_accuracy", per}, {"confusion", r.confusion}};
}

inline void write_curve(std::ostream& os, const std::vector<EpochRecord>& curve) {
  for (const auto& r : curve) os << to_json(r).dump() << '\n';
}

inline void append_jsonl(const std::string& path, const nlohmann::json& j) {
  std::ofstream os(path, std::ios::app);
  if (!os) throw DataError("cannot append to " + path);
  os << j.dump() << '\n';
}

inline void write_confusion_png(const std::string& path, const EvalReport& r, std::size_t cell = 16) {
  write_rgb_png(path, render_confusion(r.confusion, cell));
}

}  // namespace sorec
