// Hartigan & Hartigan dip statistic (AS 217), following the revised
// algorithm with the GCM/LCM fixes used by the R `diptest` package.

#include "contamscope/eval.hpp"

#include <algorithm>
#include <vector>

namespace contamscope {

double dip_statistic(std::vector<double> sample) {
  const int n = static_cast<int>(sample.size());
  if (n == 0) throw InvariantError("dip of an empty sample");
  std::sort(sample.begin(), sample.end());

  // 1-based views keep the index arithmetic identical to the reference algorithm.
  std::vector<double> x(static_cast<std::size_t>(n) + 1);
  std::copy(sample.begin(), sample.end(), x.begin() + 1);
  std::vector<int> mn(n + 1), mj(n + 1), gcm(n + 1), lcm(n + 1);

  int low = 1, high = n;
  // Degenerate samples have dip 0 rather than the 1/(2n) floor.
  double dip = 0.0;
  if (n < 2 || x[n] == x[1]) return 0.0;

  mn[1] = 1;
  for (int j = 2; j <= n; ++j) {
    mn[j] = j - 1;
    for (;;) {
      const int mnj = mn[j];
      const int mnmnj = mn[mnj];
      if (mnj == 1 || (x[j] - x[mnj]) * (mnj - mnmnj) < (x[mnj] - x[mnmnj]) * (j - mnj)) break;
      mn[j] = mnmnj;
    }
  }

  mj[n] = n;
  for (int k = n - 1; k >= 1; --k) {
    mj[k] = k + 1;
    for (;;) {
      const int mjk = mj[k];
      const int mjmjk = mj[mjk];
      if (mjk == n || (x[k] - x[mjk]) * (mjk - mjmjk) < (x[mjk] - x[mjmjk]) * (k - mjk)) break;
      mj[k] = mjmjk;
    }
  }

  for (;;) {
    gcm[1] = high;
    int i = 1;
    for (; gcm[i] > low; ++i) gcm[i + 1] = mn[gcm[i]];
    const int l_gcm = i;
    int ig = l_gcm;
    int ix = ig - 1;

    lcm[1] = low;
    i = 1;
    for (; lcm[i] < high; ++i) lcm[i + 1] = mj[lcm[i]];
    const int l_lcm = i;
    int ih = l_lcm;
    int iv = 2;

    double d = 0.0;
    if (l_gcm != 2 || l_lcm != 2) {
      do {
        long double dx;
        const int gcmix = gcm[ix];
        const int lcmiv = lcm[iv];
        if (gcmix > lcmiv) {
          const int gcmi1 = gcm[ix + 1];
          dx = (lcmiv - gcmi1 + 1) -
               (static_cast<long double>(x[lcmiv]) - x[gcmi1]) * (gcmix - gcmi1) / (x[gcmix] - x[gcmi1]);
          ++iv;
          if (dx >= d) {
            d = static_cast<double>(dx);
            ig = ix + 1;
            ih = iv - 1;
          }
        } else {
          const int lcmiv1 = lcm[iv - 1];
          dx = (static_cast<long double>(x[gcmix]) - x[lcmiv1]) * (lcmiv - lcmiv1) /
                   (x[lcmiv] - x[lcmiv1]) -
               (gcmix - lcmiv1 - 1);
          --ix;
          if (dx >= d) {
            d = static_cast<double>(dx);
            ig = ix + 1;
            ih = iv;
          }
        }
        if (ix < 1) ix = 1;
        if (iv > l_lcm) iv = l_lcm;
      } while (gcm[ix] != lcm[iv]);
    }

    if (d < dip) break;

    double dip_l = 0.0;
    for (int j = ig; j < l_gcm; ++j) {
      double max_t = 1.0;
      const int jb = gcm[j + 1], je = gcm[j];
      if (je - jb > 1 && x[je] != x[jb]) {
        const double c = (je - jb) / (x[je] - x[jb]);
        for (int jj = jb; jj <= je; ++jj) {
          const double t = (jj - jb + 1) - (x[jj] - x[jb]) * c;
          max_t = std::max(max_t, t);
        }
      }
      dip_l = std::max(dip_l, max_t);
    }

    double dip_u = 0.0;
    for (int j = ih; j < l_lcm; ++j) {
      double max_t = 1.0;
      const int jb = lcm[j], je = lcm[j + 1];
      if (je - jb > 1 && x[je] != x[jb]) {
        const double c = (je - jb) / (x[je] - x[jb]);
        for (int jj = jb; jj <= je; ++jj) {
          const double t = (x[jj] - x[jb]) * c - (jj - jb - 1);
          max_t = std::max(max_t, t);
        }
      }
      dip_u = std::max(dip_u, max_t);
    }

    dip = std::max(dip, std::max(dip_l, dip_u));

    if (low == gcm[ig] && high == lcm[ih]) break;
    low = gcm[ig];
    high = lcm[ih];
  }
  return dip / (2.0 * n);
}

}  // namespace contamscope
