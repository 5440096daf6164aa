#include "bifl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace bifl {
namespace {

uint32_t read_be32(std::ifstream& f, const std::string& path, size_t offset, const char* what) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (!f)
    throw std::runtime_error(path + ": truncated reading " + what + " at byte " +
                             std::to_string(offset));
  return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

void write_be32(std::ofstream& f, uint32_t v) {
  unsigned char b[4] = {uint8_t(v >> 24), uint8_t(v >> 16), uint8_t(v >> 8), uint8_t(v)};
  f.write(reinterpret_cast<char*>(b), 4);
}

std::string hex32(uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

std::vector<std::vector<int>> by_class(const std::vector<int>& labels, int classes) {
  std::vector<std::vector<int>> pools(classes);
  for (size_t i = 0; i < labels.size(); ++i) {
    int c = labels[i];
    if (c < 0 || c >= classes)
      throw std::runtime_error("label " + std::to_string(c) + " outside 0.." +
                               std::to_string(classes - 1));
    pools[c].push_back(int(i));
  }
  return pools;
}

void shuffle_pool(std::vector<int>& pool, Rng& rng) {
  for (size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[rng.uniform_int(int(i))]);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream fi(images_path, std::ios::binary);
  if (!fi) throw std::runtime_error("cannot open image file: " + images_path);
  uint32_t magic = read_be32(fi, images_path, 0, "magic");
  if (magic != 0x00000803u)
    throw std::runtime_error(images_path + ": bad image magic " + hex32(magic) +
                             " at byte 0 (expected 0x00000803)");
  uint32_t n = read_be32(fi, images_path, 4, "item count");
  uint32_t rows = read_be32(fi, images_path, 8, "row count");
  uint32_t cols = read_be32(fi, images_path, 12, "column count");
  size_t expect = size_t(n) * rows * cols;
  std::vector<unsigned char> pix(expect);
  fi.read(reinterpret_cast<char*>(pix.data()), std::streamsize(expect));
  if (size_t(fi.gcount()) != expect)
    throw std::runtime_error(images_path + ": truncated pixel payload at byte " +
                             std::to_string(16 + fi.gcount()) + " (expected " +
                             std::to_string(expect) + " pixel bytes)");
  Dataset ds;
  ds.images = Tensor({int(n), 1, int(rows), int(cols)});
  for (size_t i = 0; i < expect; ++i) ds.images[i] = pix[i] / 255.0;

  std::ifstream fl(labels_path, std::ios::binary);
  if (!fl) throw std::runtime_error("cannot open label file: " + labels_path);
  uint32_t lmagic = read_be32(fl, labels_path, 0, "magic");
  if (lmagic != 0x00000801u)
    throw std::runtime_error(labels_path + ": bad label magic " + hex32(lmagic) +
                             " at byte 0 (expected 0x00000801)");
  uint32_t ln = read_be32(fl, labels_path, 4, "item count");
  if (ln != n)
    throw std::runtime_error("image/label count mismatch: " + std::to_string(n) + " images vs " +
                             std::to_string(ln) + " labels");
  std::vector<unsigned char> lab(ln);
  fl.read(reinterpret_cast<char*>(lab.data()), std::streamsize(ln));
  if (size_t(fl.gcount()) != ln)
    throw std::runtime_error(labels_path + ": truncated label payload at byte " +
                             std::to_string(8 + fl.gcount()));
  ds.labels.assign(lab.begin(), lab.end());
  int mx = 0;
  for (int l : ds.labels) mx = std::max(mx, l);
  ds.classes = mx + 1;
  return ds;
}

void save_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path) {
  if (ds.images.shape.size() != 4 || ds.images.shape[1] != 1)
    throw std::runtime_error("save_idx expects {n,1,h,w} images, got " + ds.images.shape_str());
  int n = ds.images.shape[0], h = ds.images.shape[2], w = ds.images.shape[3];
  std::ofstream fi(images_path, std::ios::binary);
  if (!fi) throw std::runtime_error("cannot open for writing: " + images_path);
  write_be32(fi, 0x00000803u);
  write_be32(fi, uint32_t(n));
  write_be32(fi, uint32_t(h));
  write_be32(fi, uint32_t(w));
  for (double v : ds.images.v) {
    double q = std::clamp(v, 0.0, 1.0) * 255.0;
    unsigned char b = (unsigned char)std::lround(q);
    fi.write(reinterpret_cast<char*>(&b), 1);
  }
  std::ofstream fl(labels_path, std::ios::binary);
  if (!fl) throw std::runtime_error("cannot open for writing: " + labels_path);
  write_be32(fl, 0x00000801u);
  write_be32(fl, uint32_t(n));
  for (int l : ds.labels) {
    unsigned char b = (unsigned char)l;
    fl.write(reinterpret_cast<char*>(&b), 1);
  }
  if (!fi || !fl) throw std::runtime_error("idx write failed");
}

Dataset synth_gaussian(int classes, int per_class, int dims, uint64_t seed) {
  Dataset ds;
  int n = classes * per_class;
  ds.images = Tensor({n, dims});
  ds.labels.resize(n);
  ds.classes = classes;
  // class centers on a scaled random lattice
  std::vector<double> centers(size_t(classes) * dims);
  Rng cr = Rng::stream(seed, "gauss-centers");
  for (auto& c : centers) c = cr.uniform(-1.0, 1.0);
  for (int i = 0; i < n; ++i) {
    int c = i % classes;
    ds.labels[i] = c;
    Rng sr = Rng::stream(seed, "gauss-sample", uint64_t(i));
    for (int d = 0; d < dims; ++d)
      ds.images.v[size_t(i) * dims + d] = centers[size_t(c) * dims + d] + 0.35 * sr.normal();
  }
  return ds;
}

Dataset synth_digits(int count, uint64_t seed, uint64_t index_offset, double noise_sigma,
                     int max_shift) {
  constexpr int kSide = 28;
  constexpr int kClasses = 10;
  constexpr int kBumps = 6;

  // class prototypes: sums of random positive bumps, clipped to [0,1]
  std::vector<double> proto(size_t(kClasses) * kSide * kSide, 0.0);
  for (int c = 0; c < kClasses; ++c) {
    Rng pr = Rng::stream(seed, "digit-proto", uint64_t(c));
    for (int b = 0; b < kBumps; ++b) {
      double cx = pr.uniform(5.0, 23.0);
      double cy = pr.uniform(5.0, 23.0);
      double sg = pr.uniform(1.6, 3.6);
      double amp = pr.uniform(0.55, 1.0);
      for (int y = 0; y < kSide; ++y)
        for (int x = 0; x < kSide; ++x) {
          double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
          proto[(size_t(c) * kSide + y) * kSide + x] += amp * std::exp(-d2 / (2 * sg * sg));
        }
    }
    for (int i = 0; i < kSide * kSide; ++i) {
      double& p = proto[size_t(c) * kSide * kSide + i];
      p = std::min(1.0, p);
    }
  }

  Dataset ds;
  ds.images = Tensor({count, 1, kSide, kSide});
  ds.labels.resize(count);
  ds.classes = kClasses;
  for (int i = 0; i < count; ++i) {
    int c = i % kClasses;
    ds.labels[i] = c;
    Rng sr = Rng::stream(seed, "digit-sample", index_offset + uint64_t(i));
    int dx = sr.uniform_int(2 * max_shift + 1) - max_shift;
    int dy = sr.uniform_int(2 * max_shift + 1) - max_shift;
    double contrast = sr.uniform(0.6, 1.2);
    const double* p = &proto[size_t(c) * kSide * kSide];
    double* out = &ds.images.v[size_t(i) * kSide * kSide];
    for (int y = 0; y < kSide; ++y)
      for (int x = 0; x < kSide; ++x) {
        int sy = y - dy, sx = x - dx;
        double base = (sy >= 0 && sy < kSide && sx >= 0 && sx < kSide) ? p[sy * kSide + sx] : 0.0;
        double v = contrast * base + noise_sigma * sr.normal();
        v = std::clamp(v, 0.0, 1.0);
        out[y * kSide + x] = std::lround(v * 255.0) / 255.0;
      }
  }
  return ds;
}

Partition partition_iid(const std::vector<int>& labels, int classes, int m, Rng& rng) {
  if (m < 1) throw std::runtime_error("iid partition: need at least one client");
  auto pools = by_class(labels, classes);
  Partition part;
  part.shards.assign(m, {});
  for (int c = 0; c < classes; ++c) {
    shuffle_pool(pools[c], rng);
    size_t q = pools[c].size() / size_t(m);
    for (int k = 0; k < m; ++k)
      for (size_t j = 0; j < q; ++j) part.shards[k].push_back(pools[c][size_t(k) * q + j]);
    part.dropped += pools[c].size() - q * m;
  }
  for (auto& s : part.shards) std::sort(s.begin(), s.end());
  return part;
}

Partition partition_noniid(const std::vector<int>& labels, int classes, int m, int n_c,
                           Rng& rng) {
  if (n_c < 1 || n_c > classes)
    throw std::runtime_error("non-iid partition: n_c must be in 1.." + std::to_string(classes));
  if ((size_t(m) * n_c) % size_t(classes) != 0)
    throw std::runtime_error("non-iid partition: m*n_c (" + std::to_string(m * n_c) +
                             ") must divide by the class count " + std::to_string(classes));
  size_t per_class = size_t(m) * n_c / classes;  // subdatasets per class
  auto pools = by_class(labels, classes);
  size_t sub_size = SIZE_MAX;
  for (int c = 0; c < classes; ++c) sub_size = std::min(sub_size, pools[c].size() / per_class);
  if (sub_size == 0)
    throw std::runtime_error("non-iid partition: a class has fewer samples than subdatasets");

  Partition part;
  part.shards.assign(m, {});
  // subdataset t = (c, j) covers pools[c][j*sub_size .. )
  std::vector<std::pair<int, size_t>> subs;
  for (int c = 0; c < classes; ++c) {
    shuffle_pool(pools[c], rng);
    part.dropped += pools[c].size() - per_class * sub_size;
    for (size_t j = 0; j < per_class; ++j) subs.push_back({c, j});
  }
  auto deal = rng.permutation(int(subs.size()));
  for (int k = 0; k < m; ++k) {
    for (int t = 0; t < n_c; ++t) {
      auto [c, j] = subs[deal[size_t(k) * n_c + t]];
      for (size_t i = 0; i < sub_size; ++i)
        part.shards[k].push_back(pools[c][j * sub_size + i]);
    }
    std::sort(part.shards[k].begin(), part.shards[k].end());
  }
  return part;
}

Partition partition_unbalanced(const std::vector<int>& labels, int classes, Rng& rng) {
  size_t n = labels.size();
  if (n % 200 != 0)
    throw std::runtime_error("unbalanced partition: dataset size " + std::to_string(n) +
                             " must divide by 200");
  // 20 clients at |D|/50, 40 at |D|/100, 40 at |D|/200
  std::vector<size_t> sizes;
  for (int k = 0; k < 20; ++k) sizes.push_back(n / 50);
  for (int k = 0; k < 40; ++k) sizes.push_back(n / 100);
  for (int k = 0; k < 40; ++k) sizes.push_back(n / 200);

  auto pools = by_class(labels, classes);
  for (auto& p : pools) shuffle_pool(p, rng);
  std::vector<size_t> cursor(classes, 0);

  Partition part;
  part.shards.assign(sizes.size(), {});
  for (size_t k = 0; k < sizes.size(); ++k) {
    size_t want = sizes[k];
    // largest-remainder class quotas: exact proportions for balanced input
    std::vector<size_t> quota(classes);
    std::vector<std::pair<double, int>> frac;
    size_t assigned = 0;
    for (int c = 0; c < classes; ++c) {
      double exact = double(want) * double(pools[c].size()) / double(n);
      quota[c] = size_t(exact);
      assigned += quota[c];
      frac.push_back({exact - double(quota[c]), c});
    }
    std::sort(frac.begin(), frac.end(), [](auto& a, auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    for (size_t i = 0; assigned < want && i < frac.size(); ++i, ++assigned) ++quota[frac[i].second];
    // draw from the class pools, topping up from the fullest pools if a
    // quota overruns its pool (only possible for very skewed class counts)
    for (int c = 0; c < classes; ++c) {
      size_t take = std::min(quota[c], pools[c].size() - cursor[c]);
      for (size_t i = 0; i < take; ++i) part.shards[k].push_back(pools[c][cursor[c] + i]);
      cursor[c] += take;
    }
    while (part.shards[k].size() < want) {
      int best = -1;
      size_t most = 0;
      for (int c = 0; c < classes; ++c) {
        size_t left = pools[c].size() - cursor[c];
        if (left > most) {
          most = left;
          best = c;
        }
      }
      if (best < 0) throw std::runtime_error("unbalanced partition: ran out of samples");
      part.shards[k].push_back(pools[best][cursor[best]++]);
    }
    std::sort(part.shards[k].begin(), part.shards[k].end());
  }
  size_t used = 0;
  for (auto& s : part.shards) used += s.size();
  part.dropped = n - used;
  return part;
}

std::vector<int> stratified_subset(const std::vector<int>& labels, int classes, int count,
                                   Rng& rng) {
  auto pools = by_class(labels, classes);
  std::vector<int> out;
  int base = count / classes, extra = count % classes;
  for (int c = 0; c < classes; ++c) {
    size_t want = size_t(base) + (c < extra ? 1 : 0);
    if (pools[c].size() < want)
      throw std::runtime_error("stratified subset: class " + std::to_string(c) + " has only " +
                               std::to_string(pools[c].size()) + " samples, need " +
                               std::to_string(want));
    shuffle_pool(pools[c], rng);
    out.insert(out.end(), pools[c].begin(), pools[c].begin() + std::ptrdiff_t(want));
  }
  std::sort(out.begin(), out.end());
  return out;
}

Dataset take(const Dataset& ds, const std::vector<int>& rows) {
  Dataset out;
  out.classes = ds.classes;
  std::vector<int> shape = ds.images.shape;
  shape[0] = int(rows.size());
  out.images = Tensor(shape);
  size_t rowlen = ds.images.numel() / size_t(ds.images.shape[0]);
  out.labels.reserve(rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    int r = rows[i];
    if (r < 0 || size_t(r) >= ds.size()) throw std::runtime_error("take: row out of range");
    std::copy_n(&ds.images.v[size_t(r) * rowlen], rowlen, &out.images.v[i * rowlen]);
    out.labels.push_back(ds.labels[r]);
  }
  return out;
}

}  // namespace bifl
