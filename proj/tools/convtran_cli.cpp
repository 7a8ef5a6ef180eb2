// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The convtran authors

#include "convtran/cli.hpp"

int main(int argc, char** argv) { return convtran::cli_dispatch(argc, argv); }
