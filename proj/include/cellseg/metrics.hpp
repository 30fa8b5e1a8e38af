#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "cellseg/common.hpp"
#include "cellseg/image.hpp"

namespace cellseg {

// 2PR / (P + R); zero when there are no true positives.
inline double f_measure(long tp, long fp, long fn) {
  if (tp < 0 || fp < 0 || fn < 0)
    throw InvalidInput("f_measure: negative count");
  if (tp == 0 && fp == 0 && fn == 0)
    throw InvalidInput("f_measure: all counts are zero");
  if (tp == 0) return 0.0;
  const double p = static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double r = static_cast<double>(tp) / static_cast<double>(tp + fn);
  return 2.0 * p * r / (p + r);
}

struct CellDice {
  int truth_label = 0;
  int matched_pred_label = 0;  // 0 when no prediction overlaps
  long tp = 0;
  long fp = 0;
  long fn = 0;
  double dice = 0.0;
};

struct SegScores {
  std::vector<CellDice> cells;
  double mdice = 0.0;
  // Detection counts; filled by whoever pairs detections with annotations.
  long det_tp = 0, det_fp = 0, det_fn = 0;
  double precision = 0.0, recall = 0.0, fmeasure = 0.0;

  void finalize_detection() {
    precision = (det_tp + det_fp) > 0
                    ? static_cast<double>(det_tp) / static_cast<double>(det_tp + det_fp)
                    : 0.0;
    recall = (det_tp + det_fn) > 0
                 ? static_cast<double>(det_tp) / static_cast<double>(det_tp + det_fn)
                 : 0.0;
    fmeasure = (det_tp + det_fp + det_fn) > 0 ? f_measure(det_tp, det_fp, det_fn)
                                              : 0.0;
  }
};

// Per-cell Dice of a predicted labeling against ground truth. Each truth cell
// is assigned the predicted cell with maximal pixel overlap; overlap ties
// break to the smaller predicted area (the higher Dice, which keeps the score
// independent of label numbering), then to the lowest id. Predictions may be
// reused across truth cells. A truth cell nothing overlaps scores Dice 0 with
// fp = 0, fn = |cell|. mdice averages over the truth cells.
inline SegScores mdice(const LabelImage& pred, const LabelImage& truth) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols())
    throw InvalidInput("mdice: labelings differ in shape, " +
                       std::to_string(pred.rows()) + "x" +
                       std::to_string(pred.cols()) + " vs " +
                       std::to_string(truth.rows()) + "x" +
                       std::to_string(truth.cols()));

  std::map<int, long> pred_area, truth_area;
  std::map<std::pair<int, int>, long> overlap;
  for (Eigen::Index y = 0; y < pred.rows(); ++y) {
    for (Eigen::Index x = 0; x < pred.cols(); ++x) {
      const int pv = pred(y, x), tv = truth(y, x);
      if (pv > 0) ++pred_area[pv];
      if (tv > 0) ++truth_area[tv];
      if (pv > 0 && tv > 0) ++overlap[{tv, pv}];
    }
  }

  SegScores scores;
  for (const auto& [t_label, t_area] : truth_area) {
    CellDice cell;
    cell.truth_label = t_label;
    long best_overlap = 0;
    int best_pred = 0;
    for (auto it = overlap.lower_bound({t_label, 0});
         it != overlap.end() && it->first.first == t_label; ++it) {
      const long o = it->second;
      const int p = it->first.second;
      if (o > best_overlap ||
          (o == best_overlap && best_pred != 0 &&
           pred_area[p] < pred_area[best_pred])) {
        best_overlap = o;
        best_pred = p;
      }
    }
    if (best_pred == 0) {
      cell.tp = 0;
      cell.fp = 0;
      cell.fn = t_area;
      cell.dice = 0.0;
    } else {
      cell.matched_pred_label = best_pred;
      cell.tp = best_overlap;
      cell.fp = pred_area[best_pred] - best_overlap;
      cell.fn = t_area - best_overlap;
      cell.dice = 2.0 * static_cast<double>(cell.tp) /
                  static_cast<double>(2 * cell.tp + cell.fn + cell.fp);
    }
    scores.cells.push_back(cell);
  }
  if (!scores.cells.empty()) {
    double sum = 0.0;
    for (const auto& c : scores.cells) sum += c.dice;
    scores.mdice = sum / static_cast<double>(scores.cells.size());
  }
  return scores;
}

}  // namespace cellseg
