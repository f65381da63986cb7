#include "sslhsic/cli.hpp"

int main(int argc, char** argv) { return sslhsic::run_cli(argc, argv); }
