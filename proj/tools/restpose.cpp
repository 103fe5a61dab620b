// Copyright 2026 The restpose Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "restpose/cli.hpp"

int main(int argc, char** argv) { return restpose::cli::run(argc, argv, std::cout, std::cerr); }
