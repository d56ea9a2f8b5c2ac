#pragma once

// Dataset download for the fetch-data command. Only this tool links libcurl,
// OpenSSL and zlib; the library headers stay dependency-light.

#include <algorithm>
#include <array>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <curl/curl.h>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>
#include <zlib.h>

#include "snam/bench/artifacts.hpp"
#include "snam/bench/config.hpp"
#include "snam/error.hpp"
#include "snam/model_io.hpp"

namespace snam::fetch {

inline std::string http_get(const std::string& url) {
  CURL* curl = curl_easy_init();
  if (curl == nullptr) throw Error(ErrorCode::io_error, "cannot initialise libcurl");
  std::string body;
  auto sink = +[](char* ptr, std::size_t size, std::size_t n, void* user) -> std::size_t {
    static_cast<std::string*>(user)->append(ptr, size * n);
    return size * n;
  };
  curl_easy_setopt(curl, CURLOPT_URL, url.c_str());
  curl_easy_setopt(curl, CURLOPT_FOLLOWLOCATION, 1L);
  curl_easy_setopt(curl, CURLOPT_FAILONERROR, 1L);
  curl_easy_setopt(curl, CURLOPT_CONNECTTIMEOUT, 30L);
  curl_easy_setopt(curl, CURLOPT_USERAGENT, "snam-fetch/1");
  curl_easy_setopt(curl, CURLOPT_WRITEFUNCTION, sink);
  curl_easy_setopt(curl, CURLOPT_WRITEDATA, &body);
  const CURLcode rc = curl_easy_perform(curl);
  curl_easy_cleanup(curl);
  if (rc != CURLE_OK) throw Error(ErrorCode::io_error, "download of " + url + " failed: " + curl_easy_strerror(rc));
  return body;
}

inline std::string sha256_hex(const std::string& bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::io_error, "SHA-256 computation failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

inline std::string gunzip(const std::string& gz) {
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) throw Error(ErrorCode::io_error, "zlib init failed");
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(gz.data()));
  zs.avail_in = static_cast<uInt>(gz.size());
  std::string out;
  std::array<char, 1 << 16> buf{};
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = reinterpret_cast<Bytef*>(buf.data());
    zs.avail_out = static_cast<uInt>(buf.size());
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw Error(ErrorCode::io_error, "gzip stream is corrupt");
    }
    out.append(buf.data(), buf.size() - zs.avail_out);
  }
  inflateEnd(&zs);
  return out;
}

/// Contents of one regular file from a ustar archive.
inline std::string tar_member(const std::string& tar, const std::string& name) {
  std::size_t pos = 0;
  while (pos + 512 <= tar.size()) {
    const char* h = tar.data() + pos;
    if (h[0] == '\0') break;
    std::string entry(h, strnlen(h, 100));
    const std::string prefix(h + 345, strnlen(h + 345, 155));
    if (!prefix.empty()) entry = prefix + "/" + entry;
    const std::size_t size = std::strtoull(std::string(h + 124, 12).c_str(), nullptr, 8);
    const char type = h[156];
    if ((type == '0' || type == '\0') && (entry == name || entry == "./" + name)) {
      if (pos + 512 + size > tar.size()) break;
      return tar.substr(pos + 512, size);
    }
    pos += 512 + (size + 511) / 512 * 512;
  }
  throw Error(ErrorCode::io_error, "archive has no member '" + name + "'");
}

/// The StatLib census block file as the eight derived features plus target
/// (median house value in units of 100,000).
inline std::string convert_cal_housing(const std::string& raw) {
  std::istringstream in(raw);
  std::string out = "MedInc,HouseAge,AveRooms,AveBedrms,Population,AveOccup,Latitude,Longitude,MedHouseVal\n";
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<double> v;
    for (const auto& cell : data::detail::split_record(line)) {
      const auto d = data::detail::parse_double(cell);
      if (!d) throw Error(ErrorCode::schema_mismatch, "unexpected cell '" + cell + "' in census block file");
      v.push_back(*d);
    }
    if (v.size() != 9) throw Error(ErrorCode::schema_mismatch, "census block rows need 9 fields");
    // longitude, latitude, age, rooms, bedrooms, population, households, income, value
    const double hh = v[6];
    out += bench::num(v[7]) + "," + bench::num(v[2]) + "," + bench::num(v[3] / hh) + "," + bench::num(v[4] / hh) + "," +
           bench::num(v[5]) + "," + bench::num(v[5] / hh) + "," + bench::num(v[1]) + "," + bench::num(v[0]) + "," +
           bench::num(v[8] / 100000.0) + "\n";
  }
  return out;
}

struct FetchOptions {
  std::filesystem::path manifest_dir = "data";
  bool force = false;
};

/// Downloads every manifest that carries a URL. Checksums come from
/// checksums.json beside the manifests; a dataset without a recorded checksum
/// is pinned on first download in checksums.lock.json in the data directory.
inline int fetch_all(const FetchOptions& opt, std::ostream& log) {
  const auto pinned_path = opt.manifest_dir / "checksums.json";
  const nlohmann::json pinned = std::filesystem::exists(pinned_path) ? read_json_file(pinned_path) : nlohmann::json::object();
  std::vector<std::filesystem::path> manifests;
  for (const auto& e : std::filesystem::directory_iterator(opt.manifest_dir)) {
    const std::string name = e.path().filename().string();
    if (e.path().extension() == ".json" && name.rfind("checksums", 0) != 0) manifests.push_back(e.path());
  }
  std::sort(manifests.begin(), manifests.end());

  int fetched = 0;
  for (const auto& mp : manifests) {
    const bench::DatasetManifest m = bench::load_manifest(mp);
    const auto dir = bench::data_directory(mp);
    if (!m.url) {
      log << m.name << ": manual download required; place " << m.file << " in " << dir.string() << "\n";
      continue;
    }
    if (std::filesystem::exists(dir / m.file) && !opt.force) {
      log << m.name << ": " << (dir / m.file).string() << " already present\n";
      continue;
    }
    log << m.name << ": downloading " << *m.url << "\n";
    const std::string payload = http_get(*m.url);
    const std::string digest = sha256_hex(payload);

    const auto lock_path = dir / "checksums.lock.json";
    nlohmann::json lock = std::filesystem::exists(lock_path) ? read_json_file(lock_path) : nlohmann::json::object();
    std::optional<std::string> expected;
    if (pinned.contains(m.name) && pinned[m.name].is_string()) expected = pinned[m.name].get<std::string>();
    else if (lock.contains(m.name)) expected = lock[m.name].get<std::string>();
    if (expected && *expected != digest) {
      throw Error(ErrorCode::checksum_mismatch, m.name + ": expected SHA-256 " + *expected + ", got " + digest);
    }

    std::string text = payload;
    if (m.archive_member) text = tar_member(gunzip(payload), *m.archive_member);
    if (m.converter) {
      if (*m.converter != "cal_housing") throw Error(ErrorCode::invalid_config, "unknown converter '" + *m.converter + "'");
      text = convert_cal_housing(text);
    }
    bench::OutputSet out;
    out.add(m.file, text);
    if (!expected) {
      lock[m.name] = digest;
      out.add("checksums.lock.json", lock.dump(1) + "\n");
      log << m.name << ": no pinned checksum; recorded " << digest << "\n";
    } else {
      log << m.name << ": checksum verified\n";
    }
    out.commit(dir);
    ++fetched;
  }
  log << "fetched " << fetched << " dataset(s)\n";
  return 0;
}

}  // namespace snam::fetch
