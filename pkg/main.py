"""
Главный файл запуска coreset-select.
Точка входа в приложение: `python main.py <команда> ...`.
"""

from cli.app import main

if __name__ == "__main__":
    main()
