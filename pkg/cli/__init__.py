# Пакет командной строки coreset-select
