#ifndef COVWISH_DATASET_HPP
#define COVWISH_DATASET_HPP

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "covwish/linalg.hpp"

namespace covwish {

// A population of covariance-valued time series: subject i carries T_i
// observed SPD matrices of common dimension p. Subjects are canonicalized
// into ascending id order on construction so that every downstream
// reduction is independent of input file ordering.
class Dataset {
 public:
  static Dataset from_series(
      std::vector<std::pair<std::string, std::vector<MatrixXd>>> series,
      bool check_spd = false) {
    require(!series.empty(), ErrorClass::data, "Dataset: no subjects");
    std::sort(series.begin(), series.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    Dataset d;
    int p = -1;
    for (auto& [id, mats] : series) {
      require(!id.empty(), ErrorClass::data, "Dataset: empty subject id");
      require(!mats.empty(), ErrorClass::data,
              "Dataset: subject '" + id + "' has no observations");
      if (!d.ids_.empty())
        require(id != d.ids_.back(), ErrorClass::data,
                "Dataset: duplicate subject id '" + id + "'");
      std::vector<MatrixXd> checked;
      checked.reserve(mats.size());
      for (const auto& m : mats) {
        SpdMatrix s = SpdMatrix::from(m, check_spd);
        if (p < 0) p = s.dim();
        require(s.dim() == p, ErrorClass::data,
                "Dataset: matrix dimension mismatch for subject '" + id +
                    "'");
        checked.push_back(s.mat());
      }
      d.ids_.push_back(id);
      d.s_.push_back(std::move(checked));
    }
    d.p_ = p;
    return d;
  }

  int n() const { return static_cast<int>(ids_.size()); }
  int dim() const { return p_; }
  int t_len(int i) const { return static_cast<int>(s_[i].size()); }
  const std::string& id(int i) const { return ids_[i]; }
  const MatrixXd& at(int i, int t) const { return s_[i][t]; }  // t 0-based
  const std::vector<MatrixXd>& series(int i) const { return s_[i]; }

  int total_cells() const {
    int c = 0;
    for (const auto& v : s_) c += static_cast<int>(v.size());
    return c;
  }

  std::vector<MatrixXd> all_matrices() const {
    std::vector<MatrixXd> out;
    out.reserve(total_cells());
    for (const auto& v : s_)
      for (const auto& m : v) out.push_back(m);
    return out;
  }

  Dataset subject_subset(int i) const {
    Dataset d;
    d.ids_ = {ids_[i]};
    d.s_ = {s_[i]};
    d.p_ = p_;
    return d;
  }

  // Restricts every subject to the (0-based, inclusive) time window.
  Dataset time_window(int lo, int hi) const {
    require(lo >= 0 && hi >= lo, ErrorClass::config,
            "Dataset: invalid time window");
    Dataset d;
    d.p_ = p_;
    for (int i = 0; i < n(); ++i) {
      require(hi < t_len(i), ErrorClass::config,
              "Dataset: window exceeds series length");
      d.ids_.push_back(ids_[i]);
      d.s_.emplace_back(s_[i].begin() + lo, s_[i].begin() + hi + 1);
    }
    return d;
  }

  // Applies the smallest-eigenvalue rescaling to every matrix in place.
  void scale_by_min_eigenvalue() {
    for (auto& subj : s_)
      for (auto& m : subj) m = scale_by_min_eig(m);
  }

 private:
  std::vector<std::string> ids_;
  std::vector<std::vector<MatrixXd>> s_;
  int p_ = 0;
};

}  // namespace covwish

#endif  // COVWISH_DATASET_HPP
