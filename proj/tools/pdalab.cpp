#include "pda/cli.hpp"

int main(int argc, char** argv) { return pda::cli_dispatch(argc, argv); }
