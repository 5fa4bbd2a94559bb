// Copyright (c) 2026 the wsolkit authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>

namespace wsol {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Bad user-supplied configuration (CLI exit code 2).
struct ConfigError : Error {
    using Error::Error;
};

/// A required input file is absent (CLI exit code 3).
struct MissingArtifactError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

/// Malformed input row; carries the 1-based line number.
struct ParseError : Error {
    ParseError(const std::string& path, int line, const std::string& what)
        : Error(path + ":" + std::to_string(line) + ": " + what), line_number(line) {}
    int line_number;
};

struct TrainingError : Error {
    using Error::Error;
};

/// Fixed-format double for CSV/JSON artifacts; deterministic across runs.
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace wsol
