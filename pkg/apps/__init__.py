# Django Apps Package
